#include "htlmine/model.hpp"

#include "htlmine/errors.hpp"
#include "htlmine/rng.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace htl {

const char * arch_kind_name(arch_kind k) {
    return k == arch_kind::segmentation ? "segmentation" : "classification";
}

arch_kind arch_kind_from_name(const std::string & name) {
    if (name == "segmentation") {
        return arch_kind::segmentation;
    }
    if (name == "classification") {
        return arch_kind::classification;
    }
    throw config_error("unknown architecture tag: " + name);
}

const char * prune_method_name(prune_method m) {
    switch (m) {
        case prune_method::unstructured_magnitude: return "unstructured-magnitude";
        case prune_method::structured_magnitude:   return "structured-magnitude";
        case prune_method::random:                 return "random";
    }
    return "?";
}

prune_method prune_method_from_name(const std::string & name) {
    if (name == "unstructured-magnitude") {
        return prune_method::unstructured_magnitude;
    }
    if (name == "structured-magnitude") {
        return prune_method::structured_magnitude;
    }
    if (name == "random") {
        return prune_method::random;
    }
    throw config_error("unknown prune method: " + name);
}

void arch_config::validate() const {
    std::vector<std::string> bad;
    if (depth < 1) {
        bad.push_back("depth must be >= 1");
    }
    if (base_channels < 1) {
        bad.push_back("base_channels must be >= 1");
    }
    if (input_channels < 1) {
        bad.push_back("input_channels must be >= 1");
    }
    if (num_seg_classes != 2) {
        bad.push_back("num_seg_classes must be 2 (foreground, background)");
    }
    if (num_cls_classes < 1) {
        bad.push_back("num_cls_classes must be >= 1");
    }
    if (!bad.empty()) {
        std::string msg = "invalid arch config:";
        for (const auto & m : bad) {
            msg += " " + m + ";";
        }
        throw config_error(msg);
    }
}

bool prune_mask::same_content(const prune_mask & other) const {
    return method == other.method && ratio == other.ratio && seed == other.seed &&
           slots == other.slots;
}

namespace {

// Kaiming-uniform fan-in init with relu gain for hidden layers. Head
// weights start at zero: initial class logits are exactly uniform (the
// init sanity invariant bounds |p - 0.5| per pixel) and the symmetry
// breaks on the first step through the distinct head inputs.
void fill_kaiming_uniform(tensor & t, int64_t fan_in, bool head, uint64_t seed) {
    if (head) {
        return;   // tensors are zero-initialized
    }
    const double bound = std::sqrt(6.0 / double(fan_in));
    rng r(seed);
    for (double & v : t.data) {
        v = r.uniform(-bound, bound);
    }
}

} // namespace

void model::add_conv(const std::string & name, int in_ch, int out_ch, int k, bool head,
                     uint64_t init_seed) {
    auto w = make_tensor({out_ch, in_ch, k, k}, {}, true);
    fill_kaiming_uniform(*w, int64_t(in_ch) * k * k, head,
                         derive_seed(init_seed, params_.size(), 0x77));
    auto b = make_tensor({out_ch}, {}, true);   // zero bias
    params_.push_back({name + "_w", w, true});
    params_.push_back({name + "_b", b, false});
}

void model::add_linear(const std::string & name, int in_f, int out_f, uint64_t init_seed) {
    auto w = make_tensor({out_f, in_f}, {}, true);
    fill_kaiming_uniform(*w, in_f, true, derive_seed(init_seed, params_.size(), 0x77));
    auto b = make_tensor({out_f}, {}, true);
    params_.push_back({name + "_w", w, true});
    params_.push_back({name + "_b", b, false});
}

void model::build_backbone(uint64_t init_seed) {
    int ch = cfg_.input_channels;
    for (int s = 0; s < cfg_.depth; ++s) {
        const int out = cfg_.base_channels << s;
        add_conv("enc" + std::to_string(s) + "_conv1", ch, out, 3, false, init_seed);
        add_conv("enc" + std::to_string(s) + "_conv2", out, out, 3, false, init_seed);
        ch = out;
    }
    const int bott = cfg_.base_channels << cfg_.depth;
    add_conv("bottleneck_conv1", ch, bott, 3, false, init_seed);
    add_conv("bottleneck_conv2", bott, bott, 3, false, init_seed);
}

model model::build_unet(const arch_config & cfg, uint64_t init_seed) {
    cfg.validate();
    model m;
    m.kind_ = arch_kind::segmentation;
    m.cfg_ = cfg;
    m.build_backbone(init_seed);
    for (int s = cfg.depth - 1; s >= 0; --s) {
        const int skip = cfg.base_channels << s;
        const int up = cfg.base_channels << (s + 1);
        m.add_conv("dec" + std::to_string(s) + "_conv1", up + skip, skip, 3, false, init_seed);
        m.add_conv("dec" + std::to_string(s) + "_conv2", skip, skip, 3, false, init_seed);
    }
    m.add_conv("out_conv", cfg.base_channels, cfg.num_seg_classes, 1, true, init_seed);
    return m;
}

model model::build_classifier(const arch_config & cfg, uint64_t init_seed) {
    cfg.validate();
    model m;
    m.kind_ = arch_kind::classification;
    m.cfg_ = cfg;
    m.build_backbone(init_seed);
    m.add_linear("fc", cfg.base_channels << cfg.depth, cfg.num_cls_classes, init_seed);
    return m;
}

const param_slot & model::slot(const std::string & name) const {
    for (const auto & p : params_) {
        if (p.name == name) {
            return p;
        }
    }
    throw state_error("no parameter slot named " + name);
}

int64_t model::param_count() const {
    int64_t n = 0;
    for (const auto & p : params_) {
        n += p.value->numel();
    }
    return n;
}

int64_t model::prunable_count() const {
    int64_t n = 0;
    for (const auto & p : params_) {
        if (p.prunable) {
            n += p.value->numel();
        }
    }
    return n;
}

void model::zero_grad() {
    for (auto & p : params_) {
        p.value->zero_grad();
    }
}

namespace {

void check_batch(const arch_config & cfg, const tensor_ptr & batch) {
    if (batch->shape.size() != 4) {
        throw dimension_error("forward expects a 4-d batch, got " + shape_str(batch->shape));
    }
    if (batch->dim(1) != cfg.input_channels) {
        throw dimension_error("batch has " + std::to_string(batch->dim(1)) +
                              " channels, config expects " + std::to_string(cfg.input_channels));
    }
    const int64_t div = int64_t(1) << cfg.depth;
    if (batch->dim(2) % div != 0 || batch->dim(3) % div != 0) {
        throw dimension_error("batch spatial size " + shape_str({batch->dim(2), batch->dim(3)}) +
                              " not divisible by 2^depth = " + std::to_string(div));
    }
}

} // namespace

model::forward_result model::forward(const tensor_ptr & batch, grad_tape * tape) const {
    check_batch(cfg_, batch);

    auto conv_block = [&](const tensor_ptr & x, const std::string & name) {
        auto h = relu(conv2d(x, slot(name + "_conv1_w").value, slot(name + "_conv1_b").value, 1, 1, tape), tape);
        return relu(conv2d(h, slot(name + "_conv2_w").value, slot(name + "_conv2_b").value, 1, 1, tape), tape);
    };

    std::vector<tensor_ptr> skips;
    tensor_ptr x = batch;
    for (int s = 0; s < cfg_.depth; ++s) {
        x = conv_block(x, "enc" + std::to_string(s));
        skips.push_back(x);
        x = maxpool2d(x, 2, 2, tape);
    }
    x = conv_block(x, "bottleneck");

    forward_result res;
    if (kind_ == arch_kind::classification) {
        res.layer_l = x;
        res.logits = classify_from_features(x, tape);
        return res;
    }

    for (int s = cfg_.depth - 1; s >= 0; --s) {
        x = upsample_nearest(x, 2, tape);
        x = concat_channels(x, skips[size_t(s)], tape);
        x = conv_block(x, "dec" + std::to_string(s));
    }
    res.logits = conv2d(x, slot("out_conv_w").value, slot("out_conv_b").value, 1, 0, tape);
    return res;
}

tensor_ptr model::backbone_features(const tensor_ptr & batch, grad_tape * tape) const {
    check_batch(cfg_, batch);
    auto conv_block = [&](const tensor_ptr & x, const std::string & name) {
        auto h = relu(conv2d(x, slot(name + "_conv1_w").value, slot(name + "_conv1_b").value, 1, 1, tape), tape);
        return relu(conv2d(h, slot(name + "_conv2_w").value, slot(name + "_conv2_b").value, 1, 1, tape), tape);
    };
    tensor_ptr x = batch;
    for (int s = 0; s < cfg_.depth; ++s) {
        x = conv_block(x, "enc" + std::to_string(s));
        x = maxpool2d(x, 2, 2, tape);
    }
    return conv_block(x, "bottleneck");
}

tensor_ptr model::classify_from_features(const tensor_ptr & features, grad_tape * tape) const {
    if (kind_ != arch_kind::classification) {
        throw state_error("classify_from_features requires the classification variant");
    }
    auto pooled = global_avg_pool(features, tape);
    return linear(pooled, slot("fc_w").value, slot("fc_b").value, tape);
}

void model::apply_mask(const prune_mask & mask) {
    if (mask.slots.size() != params_.size()) {
        throw dimension_error("mask has " + std::to_string(mask.slots.size()) +
                              " slots, model has " + std::to_string(params_.size()));
    }
    if (applied_mask_) {
        if (applied_mask_->same_content(mask)) {
            return;   // idempotent re-apply
        }
        throw state_error("a different mask is already applied; remove it first");
    }
    for (size_t i = 0; i < params_.size(); ++i) {
        const auto & ms = mask.slots[i];
        if (params_[i].prunable) {
            if (int64_t(ms.size()) != params_[i].value->numel()) {
                throw dimension_error("mask slot " + params_[i].name + " has " +
                                      std::to_string(ms.size()) + " entries, parameter has " +
                                      std::to_string(params_[i].value->numel()));
            }
        } else if (!ms.empty()) {
            throw dimension_error("mask slot " + params_[i].name + " must be empty (not prunable)");
        }
    }

    shadow_.assign(params_.size(), {});
    for (size_t i = 0; i < params_.size(); ++i) {
        if (!params_[i].prunable) {
            continue;
        }
        auto & data = params_[i].value->data;
        const auto & ms = mask.slots[i];
        auto & sh = shadow_[i];
        for (size_t j = 0; j < ms.size(); ++j) {
            if (ms[j] == 0) {
                sh.push_back(data[j]);
                data[j] = 0.0;
            }
        }
    }
    applied_mask_ = mask;
}

void model::remove_mask() {
    if (!applied_mask_) {
        throw state_error("no mask applied");
    }
    for (size_t i = 0; i < params_.size(); ++i) {
        if (!params_[i].prunable) {
            continue;
        }
        auto & data = params_[i].value->data;
        const auto & ms = applied_mask_->slots[i];
        size_t k = 0;
        for (size_t j = 0; j < ms.size(); ++j) {
            if (ms[j] == 0) {
                data[j] = shadow_[i][k++];
            }
        }
    }
    applied_mask_.reset();
    shadow_.clear();
}

const prune_mask & model::applied_mask() const {
    if (!applied_mask_) {
        throw state_error("no mask applied");
    }
    return *applied_mask_;
}

model model::clone() const {
    model m;
    m.kind_ = kind_;
    m.cfg_ = cfg_;
    m.params_.reserve(params_.size());
    for (const auto & p : params_) {
        auto t = std::make_shared<tensor>(*p.value);
        m.params_.push_back({p.name, t, p.prunable});
    }
    m.applied_mask_ = applied_mask_;
    m.shadow_ = shadow_;
    return m;
}

model build_unet(const arch_config & cfg, uint64_t init_seed) {
    return model::build_unet(cfg, init_seed);
}

model build_classifier(const arch_config & cfg, uint64_t init_seed) {
    return model::build_classifier(cfg, init_seed);
}

tensor_ptr forward(const model & m, const tensor_ptr & batch, grad_tape * tape) {
    return m.forward(batch, tape).logits;
}

void optimizer_state::validate() const {
    if (learning_rate <= 0.0) {
        throw config_error("learning_rate must be > 0");
    }
    if (momentum < 0.0 || momentum >= 1.0) {
        throw config_error("momentum must be in [0, 1)");
    }
    if (weight_decay < 0.0) {
        throw config_error("weight_decay must be >= 0");
    }
}

void sgd_step(model & m, optimizer_state & opt) {
    opt.validate();
    auto & params = m.params();
    if (opt.velocity.empty()) {
        opt.velocity.resize(params.size());
    }
    if (opt.velocity.size() != params.size()) {
        throw state_error("optimizer velocity buffers do not match model");
    }
    const prune_mask * mask = m.has_mask() ? &m.applied_mask() : nullptr;

    for (size_t i = 0; i < params.size(); ++i) {
        auto & t = *params[i].value;
        if (!t.requires_grad) {
            continue;
        }
        if (t.grad.size() != t.data.size()) {
            throw state_error("missing gradient for parameter " + params[i].name);
        }
        auto & vel = opt.velocity[i];
        if (vel.empty()) {
            vel.assign(t.data.size(), 0.0);
        } else if (vel.size() != t.data.size()) {
            throw state_error("velocity shape mismatch for parameter " + params[i].name);
        }
        for (size_t j = 0; j < t.data.size(); ++j) {
            vel[j] = opt.momentum * vel[j] + t.grad[j] + opt.weight_decay * t.data[j];
            t.data[j] -= opt.learning_rate * vel[j];
        }
        if (mask != nullptr && params[i].prunable) {
            const auto & ms = mask->slots[i];
            for (size_t j = 0; j < ms.size(); ++j) {
                if (ms[j] == 0) {
                    t.data[j] = 0.0;
                    vel[j] = 0.0;
                }
            }
        }
    }
}

double grad_check(const std::vector<tensor_ptr> & params,
                  const std::function<tensor_ptr(grad_tape *)> & forward_fn,
                  double epsilon) {
    if (epsilon <= 0.0 || epsilon > 1e-2) {
        throw config_error("grad_check epsilon must be in (0, 1e-2]");
    }
    if (params.empty()) {
        return 0.0;
    }
    for (const auto & p : params) {
        p->zero_grad();
    }
    grad_tape tape;
    auto loss = forward_fn(&tape);
    tape.backward(loss);

    double max_rel = 0.0;
    for (const auto & p : params) {
        p->ensure_grad();
        for (size_t j = 0; j < p->data.size(); ++j) {
            const double orig = p->data[j];
            p->data[j] = orig + epsilon;
            const double up = forward_fn(nullptr)->data[0];
            p->data[j] = orig - epsilon;
            const double down = forward_fn(nullptr)->data[0];
            p->data[j] = orig;
            const double numeric = (up - down) / (2.0 * epsilon);
            const double analytic = p->grad[j];
            const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
            max_rel = std::max(max_rel, std::abs(numeric - analytic) / denom);
        }
    }
    return max_rel;
}

} // namespace htl
