#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace htl {

// Dense N-d array of doubles. Gradients live beside the data and stay
// empty until a backward pass touches the tensor.
struct tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;

    int64_t numel() const {
        int64_t n = 1;
        for (int64_t d : shape) {
            n *= d;
        }
        return n;
    }

    int64_t dim(size_t i) const { return shape.at(i); }

    void ensure_grad() {
        if (grad.size() != data.size()) {
            grad.assign(data.size(), 0.0);
        }
    }

    void zero_grad() {
        if (!grad.empty()) {
            grad.assign(grad.size(), 0.0);
        }
    }
};

using tensor_ptr = std::shared_ptr<tensor>;

// empty data allocates zeros
tensor_ptr make_tensor(std::vector<int64_t> shape, std::vector<double> data = {},
                       bool requires_grad = false);

std::string shape_str(const std::vector<int64_t> & shape);

// Throws numeric_error when any element is NaN or Inf.
void verify_finite(const tensor & t, const std::string & context);

// Reverse-mode tape. Forward ops append a backward rule; backward()
// replays the rules in exact reverse recording order. A tape can be
// consumed once; reuse without a fresh forward is a state error.
class grad_tape {
  public:
    void record(std::function<void()> backward_rule) {
        nodes_.push_back(std::move(backward_rule));
    }

    // Seeds d(loss)/d(loss) = 1 on a scalar output.
    void backward(const tensor_ptr & scalar_output);

    // Seeds an arbitrary cotangent on `output` (used by the saliency pass).
    void backward(const tensor_ptr & output, const std::vector<double> & seed);

    bool consumed() const { return consumed_; }
    size_t size() const { return nodes_.size(); }

  private:
    void replay();

    std::vector<std::function<void()>> nodes_;
    bool consumed_ = false;
};

} // namespace htl
