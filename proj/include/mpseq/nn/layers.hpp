#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "mpseq/nn/tensor.hpp"
#include "mpseq/random.hpp"

namespace mpseq::nn {

/// Per-axis (D, H, W) integer triple.
using Int3 = std::array<std::size_t, 3>;

/// Output extent of a strided window op; 0 when the window does not fit.
std::size_t window_extent(std::size_t n, std::size_t kernel, std::size_t stride, std::size_t pad);

/// Layer contract:
///  - infer() is const and never touches caches, so a built network can
///    serve concurrent inference calls.
///  - forward() caches what backward() needs. With batch_stats == false,
///    normalization layers use their running statistics (frozen) but still
///    support backward.
///  - backward() accumulates parameter gradients and returns dL/dinput.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor infer(const Tensor& x) const = 0;
  virtual Tensor forward(const Tensor& x, bool batch_stats) = 0;
  virtual Tensor backward(const Tensor& grad) = 0;
  virtual void collect(std::vector<Parameter*>& out) { (void)out; }
  virtual void collect(std::vector<const Parameter*>& out) const { (void)out; }
};

using LayerPtr = std::unique_ptr<Layer>;

class Conv3d final : public Layer {
 public:
  Conv3d(std::string name, std::size_t in_channels, std::size_t out_channels, Int3 kernel, Int3 stride, Int3 pad,
         bool bias, Rng& rng);
  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x, bool batch_stats) override;
  Tensor backward(const Tensor& grad) override;
  void collect(std::vector<Parameter*>& out) override;
  void collect(std::vector<const Parameter*>& out) const override;

  /// Skip computing dL/dinput (first layer of a network).
  void set_input_grad(bool needed) { input_grad_ = needed; }
  Int3 output_dims(const Int3& in) const;

 private:
  Tensor compute(const Tensor& x) const;

  std::size_t in_, out_;
  Int3 kernel_, stride_, pad_;
  bool has_bias_;
  bool input_grad_ = true;
  Parameter weight_, bias_;
  Tensor input_;
};

class BatchNorm3d final : public Layer {
 public:
  BatchNorm3d(std::string name, std::size_t channels);
  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x, bool batch_stats) override;
  Tensor backward(const Tensor& grad) override;
  void collect(std::vector<Parameter*>& out) override;
  void collect(std::vector<const Parameter*>& out) const override;

  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

 private:
  std::size_t channels_;
  Parameter gamma_, beta_, running_mean_, running_var_;
  Tensor xhat_;
  std::vector<double> inv_std_;
  bool batch_mode_ = true;
};

class ReLU final : public Layer {
 public:
  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x, bool batch_stats) override;
  Tensor backward(const Tensor& grad) override;

 private:
  Tensor output_;
};

class MaxPool3d final : public Layer {
 public:
  MaxPool3d(Int3 kernel, Int3 stride, Int3 pad) : kernel_(kernel), stride_(stride), pad_(pad) {}
  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x, bool batch_stats) override;
  Tensor backward(const Tensor& grad) override;

 private:
  Tensor compute(const Tensor& x, std::vector<std::size_t>* argmax) const;
  Int3 kernel_, stride_, pad_;
  std::array<std::size_t, 5> in_shape_{};
  std::vector<std::size_t> argmax_;
};

/// Unpadded average pooling.
class AvgPool3d final : public Layer {
 public:
  AvgPool3d(Int3 kernel, Int3 stride) : kernel_(kernel), stride_(stride) {}
  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x, bool batch_stats) override;
  Tensor backward(const Tensor& grad) override;

 private:
  Int3 kernel_, stride_;
  std::array<std::size_t, 5> in_shape_{};
};

/// (N, C, D, H, W) -> (N, C, 1, 1, 1).
class GlobalAvgPool final : public Layer {
 public:
  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x, bool batch_stats) override;
  Tensor backward(const Tensor& grad) override;

 private:
  std::array<std::size_t, 5> in_shape_{};
};

/// Fully connected layer over the flattened sample.
class Linear final : public Layer {
 public:
  Linear(std::string name, std::size_t in_features, std::size_t out_features, Rng& rng);
  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x, bool batch_stats) override;
  Tensor backward(const Tensor& grad) override;
  void collect(std::vector<Parameter*>& out) override;
  void collect(std::vector<const Parameter*>& out) const override;

 private:
  std::size_t in_, out_;
  Parameter weight_, bias_;
  Tensor input_;
};

class Sequential final : public Layer {
 public:
  Sequential() = default;
  void add(LayerPtr layer) { layers_.push_back(std::move(layer)); }
  template <typename T, typename... Args>
  T& emplace(Args&&... args) {
    auto p = std::make_unique<T>(std::forward<Args>(args)...);
    T& ref = *p;
    layers_.push_back(std::move(p));
    return ref;
  }
  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x, bool batch_stats) override;
  Tensor backward(const Tensor& grad) override;
  void collect(std::vector<Parameter*>& out) override;
  void collect(std::vector<const Parameter*>& out) const override;
  const std::vector<LayerPtr>& layers() const { return layers_; }

 private:
  std::vector<LayerPtr> layers_;
};

/// Channel concatenation of the running feature map with each layer's
/// output (DenseNet dense block). Each inner layer maps C_i -> growth.
class DenseBlock final : public Layer {
 public:
  explicit DenseBlock(std::size_t growth) : growth_(growth) {}
  void add_layer(LayerPtr layer) { layers_.push_back(std::move(layer)); }
  std::size_t size() const noexcept { return layers_.size(); }

  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x, bool batch_stats) override;
  Tensor backward(const Tensor& grad) override;
  void collect(std::vector<Parameter*>& out) override;
  void collect(std::vector<const Parameter*>& out) const override;

 private:
  std::size_t growth_;
  std::vector<LayerPtr> layers_;
  std::size_t in_channels_ = 0;
};

/// out = relu(main(x) + shortcut(x)); shortcut is identity when null.
class Residual final : public Layer {
 public:
  Residual(LayerPtr main, LayerPtr shortcut) : main_(std::move(main)), shortcut_(std::move(shortcut)) {}
  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x, bool batch_stats) override;
  Tensor backward(const Tensor& grad) override;
  void collect(std::vector<Parameter*>& out) override;
  void collect(std::vector<const Parameter*>& out) const override;

 private:
  LayerPtr main_, shortcut_;
  Tensor output_;
};

/// Adaptive-moment first-order optimizer (beta1 0.9, beta2 0.999, eps 1e-8).
class Adam {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(const std::vector<Parameter*>& params);
  std::size_t steps() const noexcept { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace mpseq::nn
