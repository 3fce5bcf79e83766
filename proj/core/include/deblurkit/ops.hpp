#pragma once

#include "deblurkit/tensor.hpp"

#include <vector>

namespace dbk::ops {

struct Conv2dOpts {
    int stride = 1;
    int padding = 0; // zero padding
    int groups = 1;
};

/// weight: [out_c, in_c/groups, kh, kw]; bias: optional [1, out_c, 1, 1].
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              const Conv2dOpts& opts = {});

/// Per-sample, per-channel normalization over the spatial plane.
/// gamma/beta are optional [1, c, 1, 1] affine parameters.
Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                     float eps = 1e-5f);

Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, float negative_slope);
Tensor tanh(const Tensor& x);
/// relu6(x + 3) / 6, the gating nonlinearity used by squeeze-excite blocks.
Tensor hard_sigmoid(const Tensor& x);
Tensor clamp(const Tensor& x, float lo, float hi);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& x, float s);
Tensor mul_scalar(const Tensor& x, float s);
/// y = x - s where s is a single-element tensor broadcast over all of x.
Tensor sub_broadcast(const Tensor& x, const Tensor& s);

/// y[n,c,:,:] = x[n,c,:,:] * scale[n,c,0,0]
Tensor mul_channelwise(const Tensor& x, const Tensor& scale);

Tensor concat_channels(const std::vector<Tensor>& xs);
Tensor slice_channels(const Tensor& x, int c_begin, int c_end);

Tensor upsample_nearest(const Tensor& x, int factor);
Tensor avg_pool2d(const Tensor& x, int kernel, int stride);
/// Global spatial mean, [n,c,h,w] -> [n,c,1,1].
Tensor mean_hw(const Tensor& x);

Tensor reflection_pad(const Tensor& x, int top, int bottom, int left, int right);
Tensor crop(const Tensor& x, int top, int bottom, int left, int right);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
/// mean((a - b)^2)
Tensor mse(const Tensor& a, const Tensor& b);

bool all_finite(const Tensor& x);

/// Closed-form multiply-accumulate count of one conv2d application.
std::int64_t conv2d_macs(int out_h, int out_w, int out_c, int in_c_per_group,
                         int kh, int kw);

} // namespace dbk::ops
