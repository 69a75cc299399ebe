#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "loupe/image.hpp"

namespace loupe {

// Unitary 2D DFT with the DC coefficient at (floor(H/2), floor(W/2)).
// Normalization is 1/sqrt(HW) in each direction, so idft2 is exactly the
// Hermitian adjoint of dft2 and the two are mutual inverses.

namespace detail {

// In-place 1D transform on strided complex data, no normalization.
// sign = -1 forward, +1 inverse. Even lengths split radix-2; odd lengths fall
// back to the direct O(n^2) sum, which keeps arbitrary sizes exact.
template <typename T>
void fft_line(T* re, T* im, int n, std::ptrdiff_t stride, int sign, std::vector<T>& scratch) {
    if (n == 1) return;
    if (n % 2 != 0) {
        scratch.resize(static_cast<std::size_t>(2) * n);
        T* outr = scratch.data();
        T* outi = scratch.data() + n;
        const double base = sign * 2.0 * 3.141592653589793238462643383279502884 / n;
        for (int k = 0; k < n; ++k) {
            double sr = 0.0, si = 0.0;
            for (int j = 0; j < n; ++j) {
                const double ang = base * (static_cast<long long>(j) * k % n);
                const double c = std::cos(ang), s = std::sin(ang);
                const double xr = re[j * stride], xi = im[j * stride];
                sr += xr * c - xi * s;
                si += xr * s + xi * c;
            }
            outr[k] = static_cast<T>(sr);
            outi[k] = static_cast<T>(si);
        }
        for (int k = 0; k < n; ++k) {
            re[k * stride] = outr[k];
            im[k * stride] = outi[k];
        }
        return;
    }
    const int half = n / 2;
    // deinterleave even/odd into scratch, transform, then combine
    std::vector<T> even(static_cast<std::size_t>(2) * half), odd(static_cast<std::size_t>(2) * half);
    for (int j = 0; j < half; ++j) {
        even[j] = re[(2 * j) * stride];
        even[half + j] = im[(2 * j) * stride];
        odd[j] = re[(2 * j + 1) * stride];
        odd[half + j] = im[(2 * j + 1) * stride];
    }
    fft_line(even.data(), even.data() + half, half, 1, sign, scratch);
    fft_line(odd.data(), odd.data() + half, half, 1, sign, scratch);
    const double base = sign * 2.0 * 3.141592653589793238462643383279502884 / n;
    for (int k = 0; k < half; ++k) {
        const double ang = base * k;
        const double c = std::cos(ang), s = std::sin(ang);
        const double tr = odd[k] * c - odd[half + k] * s;
        const double ti = odd[k] * s + odd[half + k] * c;
        re[k * stride] = static_cast<T>(even[k] + tr);
        im[k * stride] = static_cast<T>(even[half + k] + ti);
        re[(k + half) * stride] = static_cast<T>(even[k] - tr);
        im[(k + half) * stride] = static_cast<T>(even[half + k] - ti);
    }
}

template <typename T>
void fft2_inplace(BasicComplexImage<T>& img, int sign) {
    std::vector<T> scratch;
    for (int y = 0; y < img.height; ++y)
        fft_line(img.re.data() + static_cast<std::size_t>(y) * img.width,
                 img.im.data() + static_cast<std::size_t>(y) * img.width, img.width, 1, sign, scratch);
    for (int x = 0; x < img.width; ++x)
        fft_line(img.re.data() + x, img.im.data() + x, img.height, img.width, sign, scratch);
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(img.height) * img.width));
    for (std::size_t i = 0; i < img.size(); ++i) {
        img.re[i] *= scale;
        img.im[i] *= scale;
    }
}

// centered[i] = standard[(i + ceil(n/2)) mod n]
template <typename T>
BasicComplexImage<T> fftshift(const BasicComplexImage<T>& in) {
    BasicComplexImage<T> out(in.height, in.width);
    const int sy = (in.height + 1) / 2, sx = (in.width + 1) / 2;
    for (int y = 0; y < in.height; ++y) {
        const int src_y = (y + sy) % in.height;
        for (int x = 0; x < in.width; ++x) {
            const int src_x = (x + sx) % in.width;
            out.re[static_cast<std::size_t>(y) * in.width + x] =
                in.re[static_cast<std::size_t>(src_y) * in.width + src_x];
            out.im[static_cast<std::size_t>(y) * in.width + x] =
                in.im[static_cast<std::size_t>(src_y) * in.width + src_x];
        }
    }
    return out;
}

// standard[k] = centered[(k + floor(n/2)) mod n]; inverse of fftshift
template <typename T>
BasicComplexImage<T> ifftshift(const BasicComplexImage<T>& in) {
    BasicComplexImage<T> out(in.height, in.width);
    const int sy = in.height / 2, sx = in.width / 2;
    for (int y = 0; y < in.height; ++y) {
        const int src_y = (y + sy) % in.height;
        for (int x = 0; x < in.width; ++x) {
            const int src_x = (x + sx) % in.width;
            out.re[static_cast<std::size_t>(y) * in.width + x] =
                in.re[static_cast<std::size_t>(src_y) * in.width + src_x];
            out.im[static_cast<std::size_t>(y) * in.width + x] =
                in.im[static_cast<std::size_t>(src_y) * in.width + src_x];
        }
    }
    return out;
}

}  // namespace detail

template <typename T>
BasicComplexImage<T> dft2(const BasicComplexImage<T>& img) {
    BasicComplexImage<T> work = img;
    detail::fft2_inplace(work, -1);
    return detail::fftshift(work);
}

template <typename T>
BasicComplexImage<T> idft2(const BasicComplexImage<T>& ksp) {
    BasicComplexImage<T> work = detail::ifftshift(ksp);
    detail::fft2_inplace(work, +1);
    return work;
}

// Elementwise product with a real mask; accepts soft masks in [0,1].
template <typename T>
BasicComplexImage<T> apply_mask(const BasicComplexImage<T>& ksp, const BasicImage<T>& mask) {
    if (ksp.height != mask.height || ksp.width != mask.width)
        throw DimensionError("apply_mask: mask shape does not match k-space shape");
    BasicComplexImage<T> out(ksp.height, ksp.width);
    for (std::size_t i = 0; i < ksp.size(); ++i) {
        out.re[i] = ksp.re[i] * mask.values[i];
        out.im[i] = ksp.im[i] * mask.values[i];
    }
    return out;
}

// Acquisition forward model: inverse transform of the masked spectrum of x.
// This is the aliased image the reconstruction network receives.
template <typename T>
BasicComplexImage<T> undersampled_recon(const BasicImage<T>& x, const BasicImage<T>& mask) {
    if (!x.same_shape(mask)) throw DimensionError("undersampled_recon: shape mismatch");
    return idft2(apply_mask(dft2(as_complex(x)), mask));
}

template <typename T>
struct UndersampledReconGrads {
    BasicImage<T> x;
    BasicImage<T> mask;
};

// Pullback of undersampled_recon: maps a gradient with respect to the complex
// output to gradients with respect to x and the mask. Uses that the adjoint of
// idft2 is dft2 (and vice versa) under the unitary convention.
template <typename T>
UndersampledReconGrads<T> undersampled_recon_vjp(const BasicImage<T>& x, const BasicImage<T>& mask,
                                                 const BasicComplexImage<T>& out_grad) {
    if (!x.same_shape(mask)) throw DimensionError("undersampled_recon_vjp: shape mismatch");
    if (out_grad.height != x.height || out_grad.width != x.width)
        throw DimensionError("undersampled_recon_vjp: gradient shape mismatch");
    const BasicComplexImage<T> spectrum = dft2(as_complex(x));
    const BasicComplexImage<T> grad_masked = dft2(out_grad);
    UndersampledReconGrads<T> grads{BasicImage<T>(x.height, x.width), BasicImage<T>(x.height, x.width)};
    BasicComplexImage<T> grad_spectrum(x.height, x.width);
    for (std::size_t i = 0; i < spectrum.size(); ++i) {
        grads.mask.values[i] = grad_masked.re[i] * spectrum.re[i] + grad_masked.im[i] * spectrum.im[i];
        grad_spectrum.re[i] = grad_masked.re[i] * mask.values[i];
        grad_spectrum.im[i] = grad_masked.im[i] * mask.values[i];
    }
    const BasicComplexImage<T> grad_x = idft2(grad_spectrum);
    grads.x.values = grad_x.re;  // x is real; the imaginary channel is fixed at zero
    return grads;
}

}  // namespace loupe
