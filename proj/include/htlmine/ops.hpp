#pragma once

#include "htlmine/tensor.hpp"

#include <vector>

namespace htl {

// Layer forward ops. Passing a tape records the backward rule; a null
// tape runs inference only. Input gradients are produced only for
// tensors with requires_grad set, so feeding a non-grad batch skips the
// first layer's input gradient.

// input [N,Cin,H,W], weight [Cout,Cin,kH,kW], bias [Cout].
// Cross-correlation, H' = (H + 2*padding - kH)/stride + 1.
tensor_ptr conv2d(const tensor_ptr & input, const tensor_ptr & weight,
                  const tensor_ptr & bias, int stride, int padding,
                  grad_tape * tape);

// Elementwise max(0, x); gradient at exactly 0 is 0.
tensor_ptr relu(const tensor_ptr & input, grad_tape * tape);

// Non-overlapping pooling (window == stride); gradient routes to the
// argmax, first occurrence in row-major order on ties.
tensor_ptr maxpool2d(const tensor_ptr & input, int window = 2, int stride = 2,
                     grad_tape * tape = nullptr);

// Each pixel replicated factor x factor; backward sums over each block.
tensor_ptr upsample_nearest(const tensor_ptr & input, int factor = 2,
                            grad_tape * tape = nullptr);

// Channel-axis concatenation; N,H,W must match.
tensor_ptr concat_channels(const tensor_ptr & a, const tensor_ptr & b,
                           grad_tape * tape);

// x [N,F], weight [O,F], bias [O] -> [N,O].
tensor_ptr linear(const tensor_ptr & input, const tensor_ptr & weight,
                  const tensor_ptr & bias, grad_tape * tape);

// [N,C,H,W] -> [N,C] spatial mean.
tensor_ptr global_avg_pool(const tensor_ptr & input, grad_tape * tape);

// Numerically stable softmax over the class axis; rows sum to 1.
std::vector<double> softmax_pixelwise(const tensor & logits);   // [N,C,H,W]
std::vector<double> softmax_rows(const tensor & logits);        // [N,C]

// Mean over pixels of -w_c * log softmax(logits)[c] at the target class.
// logits [N,C,H,W], target [N,H,W] integer-valued class indices.
tensor_ptr weighted_cross_entropy(const tensor_ptr & logits, const tensor_ptr & target,
                                  const std::vector<double> & class_weights,
                                  grad_tape * tape);

// Mean over samples of -w_c * log softmax(logits)[c]. logits [N,C].
tensor_ptr cross_entropy_classification(const tensor_ptr & logits,
                                        const std::vector<int> & targets,
                                        const std::vector<double> & class_weights,
                                        grad_tape * tape);

} // namespace htl
