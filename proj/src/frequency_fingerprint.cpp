#include "attrib3d/frequency_fingerprint.hpp"

#include <bit>
#include <cmath>
#include <numbers>

#include "attrib3d/errors.hpp"

namespace attrib3d {
namespace {

int next_pow2(int n) { return static_cast<int>(std::bit_ceil(static_cast<unsigned>(n))); }

}  // namespace

std::vector<double> FrequencyDescriptor::flatten() const {
  std::vector<double> out;
  out.reserve(per_view.size() * kFftDims);
  for (const auto& v : per_view) out.insert(out.end(), v.begin(), v.end());
  return out;
}

void fft_inplace(std::span<std::complex<double>> a, bool inverse) {
  const std::size_t n = a.size();
  if (n == 0 || !std::has_single_bit(n)) throw SizeError("FFT length must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * std::numbers::pi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        // Twiddles evaluated directly (not by recurrence) to keep the error
        // at a few ulps for the direct-DFT cross-check.
        const std::complex<double> wk(std::cos(ang * static_cast<double>(k)), std::sin(ang * static_cast<double>(k)));
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * wk;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
    }
  }
  if (inverse) {
    for (auto& x : a) x /= static_cast<double>(n);
  }
}

std::vector<std::complex<double>> fft2d(std::span<const double> field, int height, int width) {
  std::vector<std::complex<double>> data(field.begin(), field.end());
  std::vector<std::complex<double>> column(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) {
    fft_inplace(std::span(data).subspan(static_cast<std::size_t>(y) * width, static_cast<std::size_t>(width)));
  }
  for (int x = 0; x < width; ++x) {
    for (int y = 0; y < height; ++y) column[y] = data[static_cast<std::size_t>(y) * width + x];
    fft_inplace(column);
    for (int y = 0; y < height; ++y) data[static_cast<std::size_t>(y) * width + x] = column[y];
  }
  return data;
}

std::vector<std::complex<double>> dft2d_direct(std::span<const double> field, int height, int width) {
  std::vector<std::complex<double>> out(static_cast<std::size_t>(height) * width);
  for (int u = 0; u < height; ++u) {
    for (int v = 0; v < width; ++v) {
      std::complex<double> acc = 0;
      for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
          const double ang = -2.0 * std::numbers::pi *
                             (static_cast<double>(u * y % height) / height + static_cast<double>(v * x % width) / width);
          acc += field[static_cast<std::size_t>(y) * width + x] * std::complex<double>(std::cos(ang), std::sin(ang));
        }
      }
      out[static_cast<std::size_t>(u) * width + v] = acc;
    }
  }
  return out;
}

std::vector<double> center_spectrum(std::span<const double> map, int height, int width) {
  std::vector<double> out(map.size());
  const int sy = height / 2, sx = width / 2;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      out[static_cast<std::size_t>((y + sy) % height) * width + (x + sx) % width] =
          map[static_cast<std::size_t>(y) * width + x];
    }
  }
  return out;
}

std::vector<double> adaptive_avg_pool(std::span<const double> map, int height, int width, int out_h, int out_w) {
  std::vector<double> out(static_cast<std::size_t>(out_h) * out_w);
  for (int i = 0; i < out_h; ++i) {
    const int y0 = (i * height) / out_h;
    const int y1 = ((i + 1) * height + out_h - 1) / out_h;
    for (int j = 0; j < out_w; ++j) {
      const int x0 = (j * width) / out_w;
      const int x1 = ((j + 1) * width + out_w - 1) / out_w;
      double s = 0;
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) s += map[static_cast<std::size_t>(y) * width + x];
      }
      out[static_cast<std::size_t>(i) * out_w + j] = s / static_cast<double>((y1 - y0) * (x1 - x0));
    }
  }
  return out;
}

std::vector<double> grayscale(const Image& rgb) {
  std::vector<double> gray(static_cast<std::size_t>(rgb.width) * rgb.height);
  for (std::size_t i = 0; i < gray.size(); ++i) {
    double s = 0;
    for (int c = 0; c < rgb.channels; ++c) s += rgb.data[i * rgb.channels + c];
    gray[i] = s / rgb.channels;
  }
  return gray;
}

FftVector fft_descriptor(const Image& rgb) {
  if (rgb.height < kFftGrid || rgb.width < kFftGrid) throw SizeError("FFT descriptor needs at least 16x16 pixels");
  for (float v : rgb.data) {
    if (!std::isfinite(v)) throw InputError("non-finite pixel in FFT input");
  }
  const std::vector<double> gray = grayscale(rgb);
  const int ph = next_pow2(rgb.height), pw = next_pow2(rgb.width);
  std::vector<double> padded(static_cast<std::size_t>(ph) * pw, 0.0);
  for (int y = 0; y < rgb.height; ++y) {
    for (int x = 0; x < rgb.width; ++x) {
      padded[static_cast<std::size_t>(y) * pw + x] = gray[static_cast<std::size_t>(y) * rgb.width + x];
    }
  }
  const auto spec = fft2d(padded, ph, pw);
  std::vector<double> logamp(spec.size());
  for (std::size_t i = 0; i < spec.size(); ++i) logamp[i] = std::log1p(std::abs(spec[i]));
  const auto pooled = adaptive_avg_pool(center_spectrum(logamp, ph, pw), ph, pw, kFftGrid, kFftGrid);
  FftVector out{};
  for (std::size_t i = 0; i < kFftDims; ++i) out[i] = pooled[i];
  return out;
}

FrequencyDescriptor multi_view_fft(const RenderSet& renders) {
  FrequencyDescriptor d;
  for (const Image& img : renders.rgb) d.per_view.push_back(fft_descriptor(img));
  if (!renders.rgb.empty()) {
    d.padded_height = next_pow2(renders.rgb.front().height);
    d.padded_width = next_pow2(renders.rgb.front().width);
  }
  return d;
}

}  // namespace attrib3d
