#include "mpseq/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <Eigen/Core>

#include "mpseq/error.hpp"

namespace mpseq::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Strided = Eigen::OuterStride<>;

// Upper bound on im2col buffer elements (~64 MB of doubles).
constexpr std::size_t kMaxColumnElems = std::size_t{8} << 20;

Int3 dims_of(const Tensor& x) { return {x.d(), x.h(), x.w()}; }

void require_channels(const Tensor& x, std::size_t c, const char* what) {
  if (x.c() != c) {
    throw Error(ErrorKind::ShapeMismatch, std::string(what) + " expects " + std::to_string(c) +
                                              " channels, got " + shape_string(x.shape));
  }
}

struct ConvGeometry {
  std::size_t channels;
  Int3 in, out, kernel, stride, pad;
  std::size_t k_volume() const { return kernel[0] * kernel[1] * kernel[2]; }
  std::size_t rows() const { return channels * k_volume(); }
  std::size_t in_size() const { return in[0] * in[1] * in[2]; }
  std::size_t out_size() const { return out[0] * out[1] * out[2]; }
  bool pointwise() const {
    return kernel == Int3{1, 1, 1} && stride == Int3{1, 1, 1} && pad == Int3{0, 0, 0};
  }
};

// Columns [r0 * W_out, r1 * W_out) of the im2col matrix, i.e. whole output
// rows r in [r0, r1) where r = oz * H_out + oy. col is rows() x B row-major.
template <bool Accumulate>
void im2col_rows(const ConvGeometry& g, std::conditional_t<Accumulate, double*, const double*> image, double* col,
                 std::size_t r0, std::size_t r1) {
  const std::size_t ow = g.out[2];
  const std::size_t oh = g.out[1];
  const std::size_t B = (r1 - r0) * ow;
  const long long ID = static_cast<long long>(g.in[0]);
  const long long IH = static_cast<long long>(g.in[1]);
  const long long IW = static_cast<long long>(g.in[2]);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t kz = 0; kz < g.kernel[0]; ++kz) {
      for (std::size_t ky = 0; ky < g.kernel[1]; ++ky) {
        for (std::size_t kx = 0; kx < g.kernel[2]; ++kx, ++row) {
          double* dst = col + row * B;
          // ox range for which ix = ox*sx - px + kx lies in [0, IW).
          const long long off_x = static_cast<long long>(kx) - static_cast<long long>(g.pad[2]);
          const long long sx = static_cast<long long>(g.stride[2]);
          long long lo = off_x >= 0 ? 0 : (-off_x + sx - 1) / sx;
          long long hi = IW - off_x <= 0 ? 0 : (IW - off_x + sx - 1) / sx;
          lo = std::min<long long>(lo, static_cast<long long>(ow));
          hi = std::clamp<long long>(hi, lo, static_cast<long long>(ow));
          for (std::size_t r = r0; r < r1; ++r) {
            double* d = dst + (r - r0) * ow;
            const long long oz = static_cast<long long>(r / oh);
            const long long oy = static_cast<long long>(r % oh);
            const long long iz = oz * static_cast<long long>(g.stride[0]) - static_cast<long long>(g.pad[0]) +
                                 static_cast<long long>(kz);
            const long long iy = oy * static_cast<long long>(g.stride[1]) - static_cast<long long>(g.pad[1]) +
                                 static_cast<long long>(ky);
            if (iz < 0 || iz >= ID || iy < 0 || iy >= IH) {
              if constexpr (!Accumulate) std::fill(d, d + ow, 0.0);
              continue;
            }
            auto* src = image + ((static_cast<long long>(c) * ID + iz) * IH + iy) * IW;
            if constexpr (Accumulate) {
              for (long long ox = lo; ox < hi; ++ox) src[ox * sx + off_x] += d[ox];
            } else {
              std::fill(d, d + lo, 0.0);
              if (sx == 1) {
                std::copy(src + lo + off_x, src + hi + off_x, d + lo);
              } else {
                for (long long ox = lo; ox < hi; ++ox) d[ox] = src[ox * sx + off_x];
              }
              std::fill(d + hi, d + ow, 0.0);
            }
          }
        }
      }
    }
  }
}

std::size_t rows_per_chunk(const ConvGeometry& g) {
  const std::size_t out_rows = g.out[0] * g.out[1];
  const std::size_t per_row = g.rows() * g.out[2];
  return std::clamp<std::size_t>(kMaxColumnElems / std::max<std::size_t>(per_row, 1), 1, out_rows);
}

// y (Cout x P, row-major) = W (Cout x K) * im2col(x).
void conv_forward_sample(const ConvGeometry& g, const double* w, std::size_t cout, const double* x, double* y,
                         std::vector<double>& col) {
  const std::size_t P = g.out_size();
  const std::size_t K = g.rows();
  Eigen::Map<const RowMat> W(w, static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(K));
  if (g.pointwise()) {
    Eigen::Map<const RowMat> X(x, static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
    Eigen::Map<RowMat> Y(y, static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(P));
    Y.noalias() = W * X;
    return;
  }
  const std::size_t out_rows = g.out[0] * g.out[1];
  const std::size_t chunk = rows_per_chunk(g);
  for (std::size_t r0 = 0; r0 < out_rows; r0 += chunk) {
    const std::size_t r1 = std::min(out_rows, r0 + chunk);
    const std::size_t B = (r1 - r0) * g.out[2];
    col.resize(K * B);
    im2col_rows<false>(g, x, col.data(), r0, r1);
    Eigen::Map<const RowMat> C(col.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(B));
    Eigen::Map<RowMat, 0, Strided> Y(y + r0 * g.out[2], static_cast<Eigen::Index>(cout),
                                     static_cast<Eigen::Index>(B), Strided(static_cast<Eigen::Index>(P)));
    Y.noalias() = W * C;
  }
}

}  // namespace

std::string shape_string(const std::array<std::size_t, 5>& s) {
  std::ostringstream os;
  os << '(' << s[0] << ", " << s[1] << ", " << s[2] << ", " << s[3] << ", " << s[4] << ')';
  return os.str();
}

Parameter::Parameter(std::string n, std::vector<std::size_t> s, bool learn)
    : name(std::move(n)), shape(std::move(s)), trainable(learn) {
  std::size_t count = 1;
  for (auto d : shape) count *= d;
  value.assign(count, 0.0);
  if (trainable) grad.assign(count, 0.0);
}

std::size_t window_extent(std::size_t n, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (n + 2 * pad < kernel || stride == 0) return 0;
  return (n + 2 * pad - kernel) / stride + 1;
}

// ---------------------------------------------------------------- Conv3d

Conv3d::Conv3d(std::string name, std::size_t in_channels, std::size_t out_channels, Int3 kernel, Int3 stride,
               Int3 pad, bool bias, Rng& rng)
    : in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      stride_(stride),
      pad_(pad),
      has_bias_(bias),
      weight_(name + ".weight", {out_channels, in_channels, kernel[0], kernel[1], kernel[2]}),
      bias_(name + ".bias", {bias ? out_channels : 0}) {
  // He-normal, fan-in mode.
  const double fan_in = static_cast<double>(in_channels * kernel[0] * kernel[1] * kernel[2]);
  const double std = std::sqrt(2.0 / fan_in);
  for (auto& w : weight_.value) w = rng.normal(0.0, std);
}

Int3 Conv3d::output_dims(const Int3& in) const {
  Int3 out{};
  for (std::size_t a = 0; a < 3; ++a) out[a] = window_extent(in[a], kernel_[a], stride_[a], pad_[a]);
  return out;
}

Tensor Conv3d::compute(const Tensor& x) const {
  require_channels(x, in_, weight_.name.c_str());
  const ConvGeometry g{in_, dims_of(x), output_dims(dims_of(x)), kernel_, stride_, pad_};
  if (g.out_size() == 0) throw Error(ErrorKind::ShapeMismatch, weight_.name + ": input too small " + shape_string(x.shape));
  Tensor y({x.n(), out_, g.out[0], g.out[1], g.out[2]});
  std::vector<double> col;
  for (std::size_t n = 0; n < x.n(); ++n) {
    double* ys = y.sample(n);
    conv_forward_sample(g, weight_.value.data(), out_, x.sample(n), ys, col);
    if (has_bias_) {
      const std::size_t P = g.out_size();
      for (std::size_t c = 0; c < out_; ++c) {
        const double b = bias_.value[c];
        for (std::size_t p = 0; p < P; ++p) ys[c * P + p] += b;
      }
    }
  }
  return y;
}

Tensor Conv3d::infer(const Tensor& x) const { return compute(x); }

Tensor Conv3d::forward(const Tensor& x, bool) {
  input_ = x;
  return compute(x);
}

Tensor Conv3d::backward(const Tensor& grad) {
  const ConvGeometry g{in_, dims_of(input_), output_dims(dims_of(input_)), kernel_, stride_, pad_};
  const std::size_t P = g.out_size();
  const std::size_t K = g.rows();
  const auto cout = static_cast<Eigen::Index>(out_);
  const auto kk = static_cast<Eigen::Index>(K);
  Eigen::Map<const RowMat> W(weight_.value.data(), cout, kk);
  Eigen::Map<RowMat> dW(weight_.grad.data(), cout, kk);

  Tensor dx;
  if (input_grad_) dx = Tensor(input_.shape);
  std::vector<double> col, dcol;
  for (std::size_t n = 0; n < input_.n(); ++n) {
    const double* dy = grad.sample(n);
    const double* x = input_.sample(n);
    if (has_bias_) {
      for (std::size_t c = 0; c < out_; ++c) {
        double s = 0.0;
        for (std::size_t p = 0; p < P; ++p) s += dy[c * P + p];
        bias_.grad[c] += s;
      }
    }
    if (g.pointwise()) {
      Eigen::Map<const RowMat> X(x, kk, static_cast<Eigen::Index>(P));
      Eigen::Map<const RowMat> DY(dy, cout, static_cast<Eigen::Index>(P));
      dW.noalias() += DY * X.transpose();
      if (input_grad_) {
        Eigen::Map<RowMat> DX(dx.sample(n), kk, static_cast<Eigen::Index>(P));
        DX.noalias() = W.transpose() * DY;
      }
      continue;
    }
    const std::size_t out_rows = g.out[0] * g.out[1];
    const std::size_t chunk = rows_per_chunk(g);
    for (std::size_t r0 = 0; r0 < out_rows; r0 += chunk) {
      const std::size_t r1 = std::min(out_rows, r0 + chunk);
      const std::size_t B = (r1 - r0) * g.out[2];
      const auto bb = static_cast<Eigen::Index>(B);
      col.resize(K * B);
      im2col_rows<false>(g, x, col.data(), r0, r1);
      Eigen::Map<const RowMat> C(col.data(), kk, bb);
      Eigen::Map<const RowMat, 0, Strided> DY(dy + r0 * g.out[2], cout, bb, Strided(static_cast<Eigen::Index>(P)));
      dW.noalias() += DY * C.transpose();
      if (input_grad_) {
        dcol.resize(K * B);
        Eigen::Map<RowMat> DC(dcol.data(), kk, bb);
        DC.noalias() = W.transpose() * DY;
        im2col_rows<true>(g, dx.sample(n), dcol.data(), r0, r1);
      }
    }
  }
  input_ = Tensor();
  return dx;
}

void Conv3d::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight_);
  if (has_bias_) out.push_back(&bias_);
}

void Conv3d::collect(std::vector<const Parameter*>& out) const {
  out.push_back(&weight_);
  if (has_bias_) out.push_back(&bias_);
}

// ----------------------------------------------------------- BatchNorm3d

BatchNorm3d::BatchNorm3d(std::string name, std::size_t channels)
    : channels_(channels),
      gamma_(name + ".weight", {channels}),
      beta_(name + ".bias", {channels}),
      running_mean_(name + ".running_mean", {channels}, false),
      running_var_(name + ".running_var", {channels}, false) {
  std::fill(gamma_.value.begin(), gamma_.value.end(), 1.0);
  std::fill(running_var_.value.begin(), running_var_.value.end(), 1.0);
}

Tensor BatchNorm3d::infer(const Tensor& x) const {
  require_channels(x, channels_, gamma_.name.c_str());
  Tensor y(x.shape);
  const std::size_t S = x.spatial();
  for (std::size_t c = 0; c < channels_; ++c) {
    const double inv = 1.0 / std::sqrt(running_var_.value[c] + kEps);
    const double scale = gamma_.value[c] * inv;
    const double shift = beta_.value[c] - running_mean_.value[c] * scale;
    for (std::size_t n = 0; n < x.n(); ++n) {
      const double* src = x.sample(n) + c * S;
      double* dst = y.sample(n) + c * S;
      for (std::size_t s = 0; s < S; ++s) dst[s] = src[s] * scale + shift;
    }
  }
  return y;
}

Tensor BatchNorm3d::forward(const Tensor& x, bool batch_stats) {
  require_channels(x, channels_, gamma_.name.c_str());
  batch_mode_ = batch_stats;
  const std::size_t S = x.spatial();
  const std::size_t count = x.n() * S;
  xhat_ = Tensor(x.shape);
  inv_std_.assign(channels_, 0.0);
  Tensor y(x.shape);
  for (std::size_t c = 0; c < channels_; ++c) {
    double mean, var;
    if (batch_stats) {
      double sum = 0.0;
      for (std::size_t n = 0; n < x.n(); ++n) {
        const double* src = x.sample(n) + c * S;
        for (std::size_t s = 0; s < S; ++s) sum += src[s];
      }
      mean = sum / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t n = 0; n < x.n(); ++n) {
        const double* src = x.sample(n) + c * S;
        for (std::size_t s = 0; s < S; ++s) sq += (src[s] - mean) * (src[s] - mean);
      }
      var = sq / static_cast<double>(count);
      const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
      running_mean_.value[c] = (1.0 - kMomentum) * running_mean_.value[c] + kMomentum * mean;
      running_var_.value[c] = (1.0 - kMomentum) * running_var_.value[c] + kMomentum * unbiased;
    } else {
      mean = running_mean_.value[c];
      var = running_var_.value[c];
    }
    const double inv = 1.0 / std::sqrt(var + kEps);
    inv_std_[c] = inv;
    for (std::size_t n = 0; n < x.n(); ++n) {
      const double* src = x.sample(n) + c * S;
      double* xh = xhat_.sample(n) + c * S;
      double* dst = y.sample(n) + c * S;
      for (std::size_t s = 0; s < S; ++s) {
        xh[s] = (src[s] - mean) * inv;
        dst[s] = gamma_.value[c] * xh[s] + beta_.value[c];
      }
    }
  }
  return y;
}

Tensor BatchNorm3d::backward(const Tensor& grad) {
  const std::size_t S = grad.spatial();
  const double count = static_cast<double>(grad.n() * S);
  Tensor dx(grad.shape);
  for (std::size_t c = 0; c < channels_; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t n = 0; n < grad.n(); ++n) {
      const double* dy = grad.sample(n) + c * S;
      const double* xh = xhat_.sample(n) + c * S;
      for (std::size_t s = 0; s < S; ++s) {
        sum_dy += dy[s];
        sum_dy_xhat += dy[s] * xh[s];
      }
    }
    gamma_.grad[c] += sum_dy_xhat;
    beta_.grad[c] += sum_dy;
    const double k = gamma_.value[c] * inv_std_[c];
    for (std::size_t n = 0; n < grad.n(); ++n) {
      const double* dy = grad.sample(n) + c * S;
      const double* xh = xhat_.sample(n) + c * S;
      double* d = dx.sample(n) + c * S;
      if (batch_mode_) {
        for (std::size_t s = 0; s < S; ++s) d[s] = k * (dy[s] - sum_dy / count - xh[s] * sum_dy_xhat / count);
      } else {
        for (std::size_t s = 0; s < S; ++s) d[s] = k * dy[s];
      }
    }
  }
  xhat_ = Tensor();
  return dx;
}

void BatchNorm3d::collect(std::vector<Parameter*>& out) {
  out.insert(out.end(), {&gamma_, &beta_, &running_mean_, &running_var_});
}

void BatchNorm3d::collect(std::vector<const Parameter*>& out) const {
  out.insert(out.end(), {&gamma_, &beta_, &running_mean_, &running_var_});
}

// ------------------------------------------------------------------ ReLU

Tensor ReLU::infer(const Tensor& x) const {
  Tensor y = x;
  for (auto& v : y.data) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor ReLU::forward(const Tensor& x, bool) {
  output_ = infer(x);
  return output_;
}

Tensor ReLU::backward(const Tensor& grad) {
  Tensor dx = grad;
  for (std::size_t i = 0; i < dx.data.size(); ++i) {
    if (!(output_.data[i] > 0.0)) dx.data[i] = 0.0;
  }
  output_ = Tensor();
  return dx;
}

// ------------------------------------------------------------- MaxPool3d

Tensor MaxPool3d::compute(const Tensor& x, std::vector<std::size_t>* argmax) const {
  const Int3 in = dims_of(x);
  Int3 out{};
  for (std::size_t a = 0; a < 3; ++a) out[a] = window_extent(in[a], kernel_[a], stride_[a], pad_[a]);
  if (out[0] * out[1] * out[2] == 0) throw Error(ErrorKind::ShapeMismatch, "max pool: input too small " + shape_string(x.shape));
  Tensor y({x.n(), x.c(), out[0], out[1], out[2]});
  if (argmax) argmax->assign(y.numel(), 0);
  const std::size_t planes = x.n() * x.c();
  const std::size_t in_sz = in[0] * in[1] * in[2];
  std::size_t o = 0;
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const double* src = x.data.data() + pl * in_sz;
    for (std::size_t oz = 0; oz < out[0]; ++oz) {
      for (std::size_t oy = 0; oy < out[1]; ++oy) {
        for (std::size_t ox = 0; ox < out[2]; ++ox, ++o) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_at = 0;
          for (std::size_t kz = 0; kz < kernel_[0]; ++kz) {
            const long long iz = static_cast<long long>(oz * stride_[0] + kz) - static_cast<long long>(pad_[0]);
            if (iz < 0 || iz >= static_cast<long long>(in[0])) continue;
            for (std::size_t ky = 0; ky < kernel_[1]; ++ky) {
              const long long iy = static_cast<long long>(oy * stride_[1] + ky) - static_cast<long long>(pad_[1]);
              if (iy < 0 || iy >= static_cast<long long>(in[1])) continue;
              for (std::size_t kx = 0; kx < kernel_[2]; ++kx) {
                const long long ix = static_cast<long long>(ox * stride_[2] + kx) - static_cast<long long>(pad_[2]);
                if (ix < 0 || ix >= static_cast<long long>(in[2])) continue;
                const std::size_t idx = (static_cast<std::size_t>(iz) * in[1] + static_cast<std::size_t>(iy)) * in[2] +
                                        static_cast<std::size_t>(ix);
                if (src[idx] > best) {
                  best = src[idx];
                  best_at = pl * in_sz + idx;
                }
              }
            }
          }
          y.data[o] = best;
          if (argmax) (*argmax)[o] = best_at;
        }
      }
    }
  }
  return y;
}

Tensor MaxPool3d::infer(const Tensor& x) const { return compute(x, nullptr); }

Tensor MaxPool3d::forward(const Tensor& x, bool) {
  in_shape_ = x.shape;
  return compute(x, &argmax_);
}

Tensor MaxPool3d::backward(const Tensor& grad) {
  Tensor dx(in_shape_);
  for (std::size_t o = 0; o < grad.numel(); ++o) dx.data[argmax_[o]] += grad.data[o];
  argmax_.clear();
  return dx;
}

// ------------------------------------------------------------- AvgPool3d

Tensor AvgPool3d::infer(const Tensor& x) const {
  const Int3 in = dims_of(x);
  Int3 out{};
  for (std::size_t a = 0; a < 3; ++a) out[a] = window_extent(in[a], kernel_[a], stride_[a], 0);
  if (out[0] * out[1] * out[2] == 0) throw Error(ErrorKind::ShapeMismatch, "avg pool: input too small " + shape_string(x.shape));
  Tensor y({x.n(), x.c(), out[0], out[1], out[2]});
  const double scale = 1.0 / static_cast<double>(kernel_[0] * kernel_[1] * kernel_[2]);
  const std::size_t in_sz = in[0] * in[1] * in[2];
  std::size_t o = 0;
  for (std::size_t pl = 0; pl < x.n() * x.c(); ++pl) {
    const double* src = x.data.data() + pl * in_sz;
    for (std::size_t oz = 0; oz < out[0]; ++oz)
      for (std::size_t oy = 0; oy < out[1]; ++oy)
        for (std::size_t ox = 0; ox < out[2]; ++ox, ++o) {
          double s = 0.0;
          for (std::size_t kz = 0; kz < kernel_[0]; ++kz)
            for (std::size_t ky = 0; ky < kernel_[1]; ++ky)
              for (std::size_t kx = 0; kx < kernel_[2]; ++kx)
                s += src[((oz * stride_[0] + kz) * in[1] + oy * stride_[1] + ky) * in[2] + ox * stride_[2] + kx];
          y.data[o] = s * scale;
        }
  }
  return y;
}

Tensor AvgPool3d::forward(const Tensor& x, bool) {
  in_shape_ = x.shape;
  return infer(x);
}

Tensor AvgPool3d::backward(const Tensor& grad) {
  Tensor dx(in_shape_);
  const Int3 in{in_shape_[2], in_shape_[3], in_shape_[4]};
  const Int3 out{grad.d(), grad.h(), grad.w()};
  const double scale = 1.0 / static_cast<double>(kernel_[0] * kernel_[1] * kernel_[2]);
  const std::size_t in_sz = in[0] * in[1] * in[2];
  std::size_t o = 0;
  for (std::size_t pl = 0; pl < grad.n() * grad.c(); ++pl) {
    double* dst = dx.data.data() + pl * in_sz;
    for (std::size_t oz = 0; oz < out[0]; ++oz)
      for (std::size_t oy = 0; oy < out[1]; ++oy)
        for (std::size_t ox = 0; ox < out[2]; ++ox, ++o) {
          const double g = grad.data[o] * scale;
          for (std::size_t kz = 0; kz < kernel_[0]; ++kz)
            for (std::size_t ky = 0; ky < kernel_[1]; ++ky)
              for (std::size_t kx = 0; kx < kernel_[2]; ++kx)
                dst[((oz * stride_[0] + kz) * in[1] + oy * stride_[1] + ky) * in[2] + ox * stride_[2] + kx] += g;
        }
  }
  return dx;
}

// --------------------------------------------------------- GlobalAvgPool

Tensor GlobalAvgPool::infer(const Tensor& x) const {
  Tensor y = Tensor::matrix(x.n(), x.c());
  const std::size_t S = x.spatial();
  for (std::size_t i = 0; i < x.n() * x.c(); ++i) {
    const double* src = x.data.data() + i * S;
    double s = 0.0;
    for (std::size_t k = 0; k < S; ++k) s += src[k];
    y.data[i] = s / static_cast<double>(S);
  }
  return y;
}

Tensor GlobalAvgPool::forward(const Tensor& x, bool) {
  in_shape_ = x.shape;
  return infer(x);
}

Tensor GlobalAvgPool::backward(const Tensor& grad) {
  Tensor dx(in_shape_);
  const std::size_t S = dx.spatial();
  for (std::size_t i = 0; i < grad.numel(); ++i) {
    const double g = grad.data[i] / static_cast<double>(S);
    std::fill(dx.data.begin() + static_cast<std::ptrdiff_t>(i * S),
              dx.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * S), g);
  }
  return dx;
}

// ---------------------------------------------------------------- Linear

Linear::Linear(std::string name, std::size_t in_features, std::size_t out_features, Rng& rng)
    : in_(in_features),
      out_(out_features),
      weight_(name + ".weight", {out_features, in_features}),
      bias_(name + ".bias", {out_features}) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_features));
  for (auto& w : weight_.value) w = rng.uniform(-bound, bound);
}

Tensor Linear::infer(const Tensor& x) const {
  if (x.sample_size() != in_) {
    throw Error(ErrorKind::ShapeMismatch,
                weight_.name + " expects " + std::to_string(in_) + " features, got " + shape_string(x.shape));
  }
  Tensor y = Tensor::matrix(x.n(), out_);
  const auto N = static_cast<Eigen::Index>(x.n());
  Eigen::Map<const RowMat> X(x.data.data(), N, static_cast<Eigen::Index>(in_));
  Eigen::Map<const RowMat> W(weight_.value.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
  Eigen::Map<RowMat> Y(y.data.data(), N, static_cast<Eigen::Index>(out_));
  Y.noalias() = X * W.transpose();
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t j = 0; j < out_; ++j) y.at(n, j) += bias_.value[j];
  return y;
}

Tensor Linear::forward(const Tensor& x, bool) {
  input_ = x;
  return infer(x);
}

Tensor Linear::backward(const Tensor& grad) {
  const auto N = static_cast<Eigen::Index>(input_.n());
  const auto I = static_cast<Eigen::Index>(in_);
  const auto O = static_cast<Eigen::Index>(out_);
  Eigen::Map<const RowMat> X(input_.data.data(), N, I);
  Eigen::Map<const RowMat> DY(grad.data.data(), N, O);
  Eigen::Map<const RowMat> W(weight_.value.data(), O, I);
  Eigen::Map<RowMat> dW(weight_.grad.data(), O, I);
  dW.noalias() += DY.transpose() * X;
  for (std::size_t n = 0; n < input_.n(); ++n)
    for (std::size_t j = 0; j < out_; ++j) bias_.grad[j] += grad.at(n, j);
  Tensor dx(input_.shape);
  Eigen::Map<RowMat> DX(dx.data.data(), N, I);
  DX.noalias() = DY * W;
  input_ = Tensor();
  return dx;
}

void Linear::collect(std::vector<Parameter*>& out) { out.insert(out.end(), {&weight_, &bias_}); }
void Linear::collect(std::vector<const Parameter*>& out) const { out.insert(out.end(), {&weight_, &bias_}); }

// ------------------------------------------------------------ Sequential

Tensor Sequential::infer(const Tensor& x) const {
  Tensor h = x;
  for (const auto& l : layers_) h = l->infer(h);
  return h;
}

Tensor Sequential::forward(const Tensor& x, bool batch_stats) {
  Tensor h = x;
  for (auto& l : layers_) h = l->forward(h, batch_stats);
  return h;
}

Tensor Sequential::backward(const Tensor& grad) {
  Tensor g = grad;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

void Sequential::collect(std::vector<Parameter*>& out) {
  for (auto& l : layers_) l->collect(out);
}

void Sequential::collect(std::vector<const Parameter*>& out) const {
  for (const auto& l : layers_) l->collect(out);
}

// ------------------------------------------------------------ DenseBlock

namespace {

// Copy channels [0, src.c()) of src into dst channels starting at `at`.
void place_channels(const Tensor& src, Tensor& dst, std::size_t at) {
  const std::size_t S = src.spatial();
  for (std::size_t n = 0; n < src.n(); ++n)
    std::copy(src.sample(n), src.sample(n) + src.sample_size(), dst.sample(n) + at * S);
}

Tensor concat(const Tensor& a, const Tensor& b) {
  Tensor out({a.n(), a.c() + b.c(), a.d(), a.h(), a.w()});
  place_channels(a, out, 0);
  place_channels(b, out, a.c());
  return out;
}

Tensor slice_channels(const Tensor& t, std::size_t from, std::size_t count) {
  Tensor out({t.n(), count, t.d(), t.h(), t.w()});
  const std::size_t S = t.spatial();
  for (std::size_t n = 0; n < t.n(); ++n) {
    const double* src = t.sample(n) + from * S;
    std::copy(src, src + count * S, out.sample(n));
  }
  return out;
}

}  // namespace

Tensor DenseBlock::infer(const Tensor& x) const {
  Tensor h = x;
  for (const auto& l : layers_) h = concat(h, l->infer(h));
  return h;
}

Tensor DenseBlock::forward(const Tensor& x, bool batch_stats) {
  in_channels_ = x.c();
  Tensor h = x;
  for (auto& l : layers_) h = concat(h, l->forward(h, batch_stats));
  return h;
}

Tensor DenseBlock::backward(const Tensor& grad) {
  Tensor g = grad;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const std::size_t c_in = in_channels_ + i * growth_;
    Tensor g_in = layers_[i]->backward(slice_channels(g, c_in, growth_));
    Tensor next = slice_channels(g, 0, c_in);
    for (std::size_t k = 0; k < next.numel(); ++k) next.data[k] += g_in.data[k];
    g = std::move(next);
  }
  return g;
}

void DenseBlock::collect(std::vector<Parameter*>& out) {
  for (auto& l : layers_) l->collect(out);
}

void DenseBlock::collect(std::vector<const Parameter*>& out) const {
  for (const auto& l : layers_) l->collect(out);
}

// -------------------------------------------------------------- Residual

Tensor Residual::infer(const Tensor& x) const {
  Tensor y = main_->infer(x);
  const Tensor s = shortcut_ ? shortcut_->infer(x) : x;
  if (s.shape != y.shape) throw Error(ErrorKind::ShapeMismatch, "residual branch shapes differ");
  for (std::size_t i = 0; i < y.numel(); ++i) y.data[i] = std::max(0.0, y.data[i] + s.data[i]);
  return y;
}

Tensor Residual::forward(const Tensor& x, bool batch_stats) {
  Tensor y = main_->forward(x, batch_stats);
  const Tensor s = shortcut_ ? shortcut_->forward(x, batch_stats) : x;
  if (s.shape != y.shape) throw Error(ErrorKind::ShapeMismatch, "residual branch shapes differ");
  for (std::size_t i = 0; i < y.numel(); ++i) y.data[i] = std::max(0.0, y.data[i] + s.data[i]);
  output_ = y;
  return y;
}

Tensor Residual::backward(const Tensor& grad) {
  Tensor g = grad;
  for (std::size_t i = 0; i < g.numel(); ++i)
    if (!(output_.data[i] > 0.0)) g.data[i] = 0.0;
  output_ = Tensor();
  Tensor dx = main_->backward(g);
  const Tensor ds = shortcut_ ? shortcut_->backward(g) : g;
  for (std::size_t i = 0; i < dx.numel(); ++i) dx.data[i] += ds.data[i];
  return dx;
}

void Residual::collect(std::vector<Parameter*>& out) {
  main_->collect(out);
  if (shortcut_) shortcut_->collect(out);
}

void Residual::collect(std::vector<const Parameter*>& out) const {
  main_->collect(out);
  if (shortcut_) shortcut_->collect(out);
}

// ------------------------------------------------------------------ Adam

void Adam::step(const std::vector<Parameter*>& params) {
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params[i]->size(), 0.0);
      v_[i].assign(params[i]->size(), 0.0);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    if (!p.trainable) continue;
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double g = p.grad[k];
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g;
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g * g;
      p.value[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
    }
  }
}

}  // namespace mpseq::nn
