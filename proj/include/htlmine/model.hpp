#pragma once

#include "htlmine/ops.hpp"
#include "htlmine/tensor.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace htl {

enum class arch_kind { segmentation, classification };

const char * arch_kind_name(arch_kind k);
arch_kind arch_kind_from_name(const std::string & name);

struct arch_config {
    int depth = 2;
    int base_channels = 8;
    int input_channels = 1;
    int num_seg_classes = 2;
    int num_cls_classes = 2;

    void validate() const;   // throws config_error listing violations
};

enum class prune_method { unstructured_magnitude, structured_magnitude, random };

const char * prune_method_name(prune_method m);
prune_method prune_method_from_name(const std::string & name);

// Binary keep-masks, one entry per model parameter slot. Exempt slots
// (biases) carry an empty vector.
struct prune_mask {
    prune_method method = prune_method::unstructured_magnitude;
    double ratio = 0.0;
    uint64_t seed = 0;
    std::vector<std::vector<uint8_t>> slots;

    bool same_content(const prune_mask & other) const;
};

struct param_slot {
    std::string name;
    tensor_ptr value;
    bool prunable = false;   // conv and linear weights; biases exempt
};

// Fixed two-variant network family: a U-Net segmentation head and the
// same encoder/bottleneck with a global-average-pool + linear
// classification head. Channel widths double per stage from
// base_channels; encoder and decoder mirror each other.
class model {
  public:
    static model build_unet(const arch_config & cfg, uint64_t init_seed = 0);
    static model build_classifier(const arch_config & cfg, uint64_t init_seed = 0);

    struct forward_result {
        tensor_ptr logits;
        tensor_ptr layer_l;   // classifier only: post-relu bottleneck features
    };

    forward_result forward(const tensor_ptr & batch, grad_tape * tape = nullptr) const;

    // Classifier pieces, split so a saliency pass can seed gradients at
    // the bottleneck features without dragging the encoder onto the tape.
    tensor_ptr backbone_features(const tensor_ptr & batch, grad_tape * tape) const;
    tensor_ptr classify_from_features(const tensor_ptr & features, grad_tape * tape) const;

    arch_kind kind() const { return kind_; }
    const arch_config & config() const { return cfg_; }

    std::vector<param_slot> & params() { return params_; }
    const std::vector<param_slot> & params() const { return params_; }
    const param_slot & slot(const std::string & name) const;
    int64_t param_count() const;
    int64_t prunable_count() const;

    void zero_grad();

    // Shadow-masked pruning. apply stores the values it zeroes so that
    // remove restores them bit-exactly; apply twice with the same mask
    // is a no-op.
    void apply_mask(const prune_mask & mask);
    void remove_mask();
    bool has_mask() const { return applied_mask_.has_value(); }
    const prune_mask & applied_mask() const;

    // Deep copy (parameters and mask state).
    model clone() const;

  private:
    model() = default;
    void add_conv(const std::string & name, int in_ch, int out_ch, int k, bool head,
                  uint64_t init_seed);
    void add_linear(const std::string & name, int in_f, int out_f, uint64_t init_seed);
    void build_backbone(uint64_t init_seed);

    arch_kind kind_ = arch_kind::segmentation;
    arch_config cfg_;
    std::vector<param_slot> params_;
    std::optional<prune_mask> applied_mask_;
    // values zeroed by the active mask, per slot, in mask order
    std::vector<std::vector<double>> shadow_;
};

model build_unet(const arch_config & cfg, uint64_t init_seed = 0);
model build_classifier(const arch_config & cfg, uint64_t init_seed = 0);
tensor_ptr forward(const model & m, const tensor_ptr & batch, grad_tape * tape = nullptr);

struct optimizer_state {
    double learning_rate = 0.1;
    double momentum = 0.9;
    double weight_decay = 2e-4;
    std::vector<int> decay_epochs;
    double decay_factor = 0.1;
    std::vector<std::vector<double>> velocity;   // parallel to model params

    void validate() const;
};

// velocity <- momentum*velocity + grad + weight_decay*param;
// param <- param - lr*velocity. Positions zeroed by an applied mask
// stay exactly 0.
void sgd_step(model & m, optimizer_state & opt);

// Central-difference check of every parameter gradient. forward_fn must
// rebuild the computation (on the given tape, or tape-less for the
// perturbed evaluations) and return a scalar. Relative error uses a
// 1e-6 denominator floor so true-zero gradients do not divide by noise.
double grad_check(const std::vector<tensor_ptr> & params,
                  const std::function<tensor_ptr(grad_tape *)> & forward_fn,
                  double epsilon);

} // namespace htl
