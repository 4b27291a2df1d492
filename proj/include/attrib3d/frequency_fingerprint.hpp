#pragma once

#include <array>
#include <complex>
#include <span>
#include <vector>

#include "attrib3d/image.hpp"
#include "attrib3d/renderer.hpp"

namespace attrib3d {

inline constexpr int kFftGrid = 16;
inline constexpr std::size_t kFftDims = kFftGrid * kFftGrid;

using FftVector = std::array<double, kFftDims>;

struct FrequencyDescriptor {
  std::vector<FftVector> per_view;
  int padded_height = 0;  // transform size after zero-padding to a power of two
  int padded_width = 0;

  std::vector<double> flatten() const;
};

/// In-place radix-2 complex FFT; size must be a power of two.
void fft_inplace(std::span<std::complex<double>> data, bool inverse = false);

/// 2-D FFT of a real row-major field; both dimensions must be powers of two.
std::vector<std::complex<double>> fft2d(std::span<const double> field, int height, int width);

/// O(N^4) reference DFT, used to cross-check the fast path.
std::vector<std::complex<double>> dft2d_direct(std::span<const double> field, int height, int width);

/// Swaps quadrants so the zero frequency sits at (H/2, W/2).
std::vector<double> center_spectrum(std::span<const double> map, int height, int width);

/// Adaptive average pooling to out_h x out_w with start=floor(i*H/out),
/// end=ceil((i+1)*H/out).
std::vector<double> adaptive_avg_pool(std::span<const double> map, int height, int width, int out_h, int out_w);

std::vector<double> grayscale(const Image& rgb);

/// gray -> zero-pad to power of two -> |FFT| -> log1p -> center -> pool 16x16.
/// Throws InputError on non-finite pixels and SizeError below 16x16.
FftVector fft_descriptor(const Image& rgb);

FrequencyDescriptor multi_view_fft(const RenderSet& renders);

}  // namespace attrib3d
