#pragma once

#include "gsavatar/renderer.hpp"

namespace gsavatar {

template <typename S>
struct L1Result {
    double loss = 0.0;
    Image<S> grad;  // sign(pred - target) / (W * H * 3)
};

/// Mean absolute difference over all pixels and channels.
template <typename S>
L1Result<S> l1_loss(const Image<S>& pred, const Image<S>& target);

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE) on [0, 1] images, capped at 99 dB.
template <typename S>
double psnr(const Image<S>& pred, const Image<S>& target);

/// Mean SSIM over channels and valid window positions; 11x11 Gaussian window,
/// sigma 1.5, C1 = 0.01^2, C2 = 0.03^2.
template <typename S>
double ssim(const Image<S>& pred, const Image<S>& target);

}  // namespace gsavatar
