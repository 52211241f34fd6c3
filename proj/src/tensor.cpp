#include "htlmine/tensor.hpp"

#include "htlmine/errors.hpp"

#include <cmath>
#include <sstream>

namespace htl {

tensor_ptr make_tensor(std::vector<int64_t> shape, std::vector<double> data,
                       bool requires_grad) {
    auto t = std::make_shared<tensor>();
    t->shape = std::move(shape);
    if (data.empty()) {
        t->data.assign(size_t(t->numel()), 0.0);
    } else {
        if (int64_t(data.size()) != t->numel()) {
            throw dimension_error("tensor data length " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(t->shape));
        }
        t->data = std::move(data);
    }
    t->requires_grad = requires_grad;
    return t;
}

std::string shape_str(const std::vector<int64_t> & shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) {
            os << ",";
        }
        os << shape[i];
    }
    os << "]";
    return os.str();
}

void verify_finite(const tensor & t, const std::string & context) {
    for (double v : t.data) {
        if (!std::isfinite(v)) {
            throw numeric_error("non-finite value in " + context);
        }
    }
    for (double v : t.grad) {
        if (!std::isfinite(v)) {
            throw numeric_error("non-finite gradient in " + context);
        }
    }
}

void grad_tape::backward(const tensor_ptr & scalar_output) {
    if (scalar_output->numel() != 1) {
        throw dimension_error("backward expects a scalar output, got shape " +
                              shape_str(scalar_output->shape));
    }
    backward(scalar_output, {1.0});
}

void grad_tape::backward(const tensor_ptr & output, const std::vector<double> & seed) {
    if (consumed_) {
        throw state_error("grad_tape already consumed; run a new forward pass");
    }
    if (seed.size() != output->data.size()) {
        throw dimension_error("backward seed size does not match output");
    }
    output->ensure_grad();
    for (size_t i = 0; i < seed.size(); ++i) {
        output->grad[i] += seed[i];
    }
    replay();
}

void grad_tape::replay() {
    consumed_ = true;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        (*it)();
    }
}

} // namespace htl
