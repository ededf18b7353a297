#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "defrec/pointcloud.hpp"

namespace defrec {

template <class T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Flat parameter storage. The fixed base alignment makes every tensor's
/// address, and with it Eigen's vectorized summation order, identical from
/// run to run regardless of heap state.
template <class T>
using ParamVector = std::vector<T, Eigen::aligned_allocator<T>>;

enum class Mode { Train, Eval };

/// Layer widths of the encoder and its heads.
///
/// Encoder: shared per-point layers `point_widths`, then a per-point layer of
/// `global_width` that is max-pooled over points. h_sup: fully connected
/// `sup_widths` then `num_classes`. Point heads (h_SSL, and the segmentation
/// head) see [global feature | concatenated per-point layer outputs] and use
/// `ssl_widths` then 3, or `seg_widths` then `num_classes`.
struct NetworkShape {
  int num_classes = 10;
  std::vector<int> point_widths{64, 64, 128, 256};
  int global_width = 1024;
  std::vector<int> sup_widths{512, 256};
  std::vector<int> ssl_widths{256, 256, 128};
  std::vector<int> seg_widths{256, 256, 128};
  double dropout = 0.5;
  bool segmentation = false;  ///< segmentation head replaces h_sup

  int skip_width() const;
  void validate() const;
  friend bool operator==(const NetworkShape&, const NetworkShape&) = default;
};

struct TensorInfo {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  std::size_t offset = 0;
};

/// Tensor indices of one dense layer. `w_global` is set only on the first
/// layer of a point head, which splits its weight into global and per-point parts.
struct DenseRef {
  int w = -1;
  int w_global = -1;
  int b = -1;
};

/// Placement of every tensor inside the flat parameter vector.
struct ParamLayout {
  std::vector<TensorInfo> tensors;
  std::size_t total = 0;
  std::vector<DenseRef> encoder;  ///< point layers, then the global-width layer
  std::vector<DenseRef> sup;
  std::vector<DenseRef> ssl;
  std::vector<DenseRef> seg;

  static ParamLayout build(const NetworkShape& shape);
  int find(const std::string& name) const;  ///< -1 when absent
};

/// Encoder plus heads, all parameters in one flat vector.
template <class T>
class Model {
 public:
  using Map = Eigen::Map<MatX<T>>;
  using ConstMap = Eigen::Map<const MatX<T>>;

  Model() = default;
  explicit Model(NetworkShape shape);

  /// Weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
  void init_glorot(std::uint64_t seed);

  const NetworkShape& shape() const noexcept { return shape_; }
  const ParamLayout& layout() const noexcept { return layout_; }
  ParamVector<T>& params() noexcept { return params_; }
  const ParamVector<T>& params() const noexcept { return params_; }

  ConstMap tensor(int id) const;
  Map tensor(int id);

  template <class U>
  Model<U> cast() const {
    Model<U> out(shape_);
    for (std::size_t i = 0; i < params_.size(); ++i) out.params()[i] = static_cast<U>(params_[i]);
    return out;
  }

 private:
  NetworkShape shape_;
  ParamLayout layout_;
  ParamVector<T> params_;
};

template <class T>
struct Gradients {
  ParamVector<T> values;

  Gradients() = default;
  explicit Gradients(std::size_t n) : values(n, T(0)) {}
  void zero() { std::fill(values.begin(), values.end(), T(0)); }
};

template <class T>
struct EncoderTrace {
  std::vector<Eigen::Index> offsets;  ///< row range of cloud b is [offsets[b], offsets[b+1])
  MatX<T> input;                      ///< N x 3
  std::vector<MatX<T>> layers;        ///< post-ReLU output of each per-point layer, global-width layer last
  MatX<T> global;                     ///< B x global_width
  Eigen::Matrix<Eigen::Index, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> argmax;
  MatX<T> skip;                       ///< concatenated point-layer outputs, N x skip_width

  std::size_t batch() const { return offsets.empty() ? 0 : offsets.size() - 1; }
  /// Per-point features of cloud b at a 1-based point layer.
  MatX<T> layer_features(std::size_t b, int layer) const;
};

template <class T>
struct DenseStackTrace {
  MatX<T> input;
  std::vector<MatX<T>> relu;  ///< post-ReLU hidden activations
  std::vector<MatX<T>> mask;  ///< dropout scale per hidden layer (empty = none)
  MatX<T> output;

  /// Activation fed into hidden layer k + 1 (relu[k] with dropout applied).
  MatX<T> hidden_out(std::size_t k) const;
};

template <class T>
struct ForwardTrace {
  EncoderTrace<T> encoder;
  std::optional<DenseStackTrace<T>> sup;
  std::optional<DenseStackTrace<T>> ssl;
  std::optional<DenseStackTrace<T>> seg;
  std::size_t param_count = 0;
};

/// Shared per-point MLP and max-pool. Throws NumericalError("numerical overflow")
/// on a non-finite activation.
template <class T>
EncoderTrace<T> encode(const Model<T>& model, const std::vector<PointCloud>& clouds);

/// h_sup logits (B x C). Dropout masks in train mode come from `dropout_seed`.
template <class T>
DenseStackTrace<T> head_sup(const Model<T>& model, const EncoderTrace<T>& enc, Mode mode,
                            std::uint64_t dropout_seed = 0);

/// h_SSL reconstruction (N x 3, row-aligned with the encoder input).
template <class T>
DenseStackTrace<T> head_ssl(const Model<T>& model, const EncoderTrace<T>& enc);

/// Per-point class logits (N x C) of the segmentation head.
template <class T>
DenseStackTrace<T> head_seg(const Model<T>& model, const EncoderTrace<T>& enc);

/// Loss gradients at the outputs; absent heads contribute nothing.
template <class T>
struct OutputGrads {
  const MatX<T>* logits = nullptr;
  const MatX<T>* reconstruction = nullptr;
  const MatX<T>* seg_logits = nullptr;
};

/// Reverse-mode pass; adds d loss / d params into `grads`.
template <class T>
void backward(const Model<T>& model, const ForwardTrace<T>& trace, const OutputGrads<T>& upstream,
              Gradients<T>& grads);

template <class T>
Gradients<T> backward(const Model<T>& model, const ForwardTrace<T>& trace, const OutputGrads<T>& upstream) {
  Gradients<T> g(model.params().size());
  backward(model, trace, upstream, g);
  return g;
}

/// Input to h_sup's final linear layer (post-ReLU, eval mode), one row per cloud.
Eigen::MatrixXd extract_features(const Model<float>& model, const std::vector<PointCloud>& clouds,
                                 std::size_t batch_size = 64);

/// Per-point features of one cloud at a 1-based encoder layer (eval mode).
Eigen::MatrixXd point_features(const Model<float>& model, const PointCloud& cloud, int layer);

extern template class Model<float>;
extern template class Model<double>;

}  // namespace defrec
