#include "defrec/network.hpp"

#include <cmath>
#include <numeric>

#include "defrec/errors.hpp"
#include "defrec/rng.hpp"

namespace defrec {

int NetworkShape::skip_width() const { return std::accumulate(point_widths.begin(), point_widths.end(), 0); }

void NetworkShape::validate() const {
  auto positive = [](const std::vector<int>& widths, const char* what) {
    for (int w : widths) {
      if (w < 1) throw InvalidArgument(std::string(what) + " widths must be positive");
    }
  };
  if (num_classes < 2) throw InvalidArgument("need at least two classes");
  if (point_widths.empty()) throw InvalidArgument("encoder needs at least one per-point layer");
  positive(point_widths, "encoder");
  positive(sup_widths, "h_sup");
  positive(ssl_widths, "h_SSL");
  positive(seg_widths, "segmentation head");
  if (global_width < 1) throw InvalidArgument("global width must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidArgument("dropout must lie in [0, 1)");
}

namespace {

int add_tensor(ParamLayout& layout, std::string name, Eigen::Index rows, Eigen::Index cols) {
  layout.tensors.push_back(TensorInfo{std::move(name), rows, cols, layout.total});
  layout.total += static_cast<std::size_t>(rows * cols);
  return static_cast<int>(layout.tensors.size() - 1);
}

std::vector<DenseRef> add_stack(ParamLayout& layout, const std::string& prefix, int in, const std::vector<int>& hidden,
                                int out) {
  std::vector<DenseRef> refs;
  std::vector<int> widths = hidden;
  widths.push_back(out);
  for (std::size_t k = 0; k < widths.size(); ++k) {
    const std::string base = prefix + std::to_string(k);
    DenseRef r;
    r.w = add_tensor(layout, base + ".w", in, widths[k]);
    r.b = add_tensor(layout, base + ".b", 1, widths[k]);
    refs.push_back(r);
    in = widths[k];
  }
  return refs;
}

std::vector<DenseRef> add_point_head(ParamLayout& layout, const std::string& prefix, int global_in, int skip_in,
                                     const std::vector<int>& hidden, int out) {
  std::vector<int> widths = hidden;
  widths.push_back(out);
  std::vector<DenseRef> refs;
  DenseRef first;
  first.w_global = add_tensor(layout, prefix + "0.wg", global_in, widths[0]);
  first.w = add_tensor(layout, prefix + "0.wf", skip_in, widths[0]);
  first.b = add_tensor(layout, prefix + "0.b", 1, widths[0]);
  refs.push_back(first);
  int in = widths[0];
  for (std::size_t k = 1; k < widths.size(); ++k) {
    const std::string base = prefix + std::to_string(k);
    DenseRef r;
    r.w = add_tensor(layout, base + ".w", in, widths[k]);
    r.b = add_tensor(layout, base + ".b", 1, widths[k]);
    refs.push_back(r);
    in = widths[k];
  }
  return refs;
}

}  // namespace

ParamLayout ParamLayout::build(const NetworkShape& shape) {
  shape.validate();
  ParamLayout layout;
  int in = 3;
  for (std::size_t l = 0; l < shape.point_widths.size(); ++l) {
    const std::string base = "enc" + std::to_string(l);
    DenseRef r;
    r.w = add_tensor(layout, base + ".w", in, shape.point_widths[l]);
    r.b = add_tensor(layout, base + ".b", 1, shape.point_widths[l]);
    layout.encoder.push_back(r);
    in = shape.point_widths[l];
  }
  {
    const std::string base = "enc" + std::to_string(shape.point_widths.size());
    DenseRef r;
    r.w = add_tensor(layout, base + ".w", in, shape.global_width);
    r.b = add_tensor(layout, base + ".b", 1, shape.global_width);
    layout.encoder.push_back(r);
  }
  if (shape.segmentation) {
    layout.seg = add_point_head(layout, "seg", shape.global_width, shape.skip_width(), shape.seg_widths,
                                shape.num_classes);
  } else {
    layout.sup = add_stack(layout, "sup", shape.global_width, shape.sup_widths, shape.num_classes);
  }
  layout.ssl = add_point_head(layout, "ssl", shape.global_width, shape.skip_width(), shape.ssl_widths, 3);
  return layout;
}

int ParamLayout::find(const std::string& name) const {
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

template <class T>
Model<T>::Model(NetworkShape shape)
    : shape_(std::move(shape)), layout_(ParamLayout::build(shape_)), params_(layout_.total, T(0)) {}

template <class T>
void Model<T>::init_glorot(std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::fill(params_.begin(), params_.end(), T(0));
  for (const TensorInfo& t : layout_.tensors) {
    if (t.rows == 1 && t.name.ends_with(".b")) continue;
    // Split first-layer weights share one fan-in: the full concatenated input.
    Eigen::Index fan_in = t.rows;
    if (t.name.ends_with(".wg") || t.name.ends_with(".wf")) fan_in = shape_.global_width + shape_.skip_width();
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + t.cols));
    for (Eigen::Index i = 0; i < t.rows * t.cols; ++i) {
      params_[t.offset + static_cast<std::size_t>(i)] = static_cast<T>((2.0 * uniform01(rng) - 1.0) * bound);
    }
  }
}

template <class T>
typename Model<T>::ConstMap Model<T>::tensor(int id) const {
  const TensorInfo& t = layout_.tensors.at(static_cast<std::size_t>(id));
  return ConstMap(params_.data() + t.offset, t.rows, t.cols);
}

template <class T>
typename Model<T>::Map Model<T>::tensor(int id) {
  const TensorInfo& t = layout_.tensors.at(static_cast<std::size_t>(id));
  return Map(params_.data() + t.offset, t.rows, t.cols);
}

template class Model<float>;
template class Model<double>;

template <class T>
MatX<T> EncoderTrace<T>::layer_features(std::size_t b, int layer) const {
  if (layer < 1 || static_cast<std::size_t>(layer) > layers.size()) throw InvalidArgument("encoder layer out of range");
  const Eigen::Index begin = offsets.at(b);
  const Eigen::Index end = offsets.at(b + 1);
  return layers[static_cast<std::size_t>(layer - 1)].middleRows(begin, end - begin);
}

template <class T>
MatX<T> DenseStackTrace<T>::hidden_out(std::size_t k) const {
  if (k < mask.size() && mask[k].size() > 0) return relu[k].cwiseProduct(mask[k]);
  return relu[k];
}

namespace {

template <class T>
using GradMap = Eigen::Map<MatX<T>>;

template <class T>
GradMap<T> grad_tensor(const ParamLayout& layout, Gradients<T>& g, int id) {
  const TensorInfo& t = layout.tensors[static_cast<std::size_t>(id)];
  return GradMap<T>(g.values.data() + t.offset, t.rows, t.cols);
}

template <class T>
void check_finite(const MatX<T>& m) {
  if (!m.allFinite()) throw NumericalError("numerical overflow");
}

// GEMM rounding depends on where a row lands relative to the kernel's row
// panels, and a one-row product takes a GEMV path. Multiplying whole panels
// (the tail zero-padded) gives every row identical arithmetic, so per-point
// outputs do not depend on point order or batch composition. 48 is a multiple
// of Eigen's panel heights for float and double on SSE, AVX and AVX-512.
constexpr Eigen::Index kRowPanel = 48;

template <class T, class W>
MatX<T> row_stable_product(const MatX<T>& x, const W& w) {
  MatX<T> z(x.rows(), w.cols());
  const Eigen::Index full = x.rows() / kRowPanel * kRowPanel;
  if (full > 0) z.topRows(full).noalias() = x.topRows(full) * w;
  const Eigen::Index rest = x.rows() - full;
  if (rest > 0) {
    MatX<T> padded = MatX<T>::Zero(kRowPanel, x.cols());
    padded.topRows(rest) = x.bottomRows(rest);
    MatX<T> out(kRowPanel, w.cols());
    out.noalias() = padded * w;
    z.bottomRows(rest) = out.topRows(rest);
  }
  return z;
}

template <class T>
MatX<T> affine(const Model<T>& model, const MatX<T>& x, const DenseRef& r) {
  MatX<T> z = row_stable_product(x, model.tensor(r.w));
  z.rowwise() += model.tensor(r.b).row(0);
  return z;
}

template <class T>
void relu_inplace(MatX<T>& m) {
  m = m.cwiseMax(T(0));
}

// Hidden layers of a dense stack after its first affine map.
template <class T>
void run_stack(const Model<T>& model, const std::vector<DenseRef>& refs, MatX<T> first_pre, DenseStackTrace<T>& tr,
               double dropout, Rng* dropout_rng) {
  MatX<T> pre = std::move(first_pre);
  for (std::size_t k = 0;; ++k) {
    if (k + 1 == refs.size()) {
      tr.output = std::move(pre);
      check_finite(tr.output);
      return;
    }
    relu_inplace(pre);
    tr.relu.push_back(std::move(pre));
    if (dropout_rng != nullptr && dropout > 0.0 && k < 2) {
      const T keep_scale = static_cast<T>(1.0 / (1.0 - dropout));
      MatX<T> mask(tr.relu.back().rows(), tr.relu.back().cols());
      for (Eigen::Index i = 0; i < mask.size(); ++i) {
        mask.data()[i] = uniform01(*dropout_rng) < dropout ? T(0) : keep_scale;
      }
      tr.mask.push_back(std::move(mask));
    } else {
      tr.mask.emplace_back();
    }
    pre = affine(model, tr.hidden_out(k), refs[k + 1]);
  }
}

template <class T>
DenseStackTrace<T> point_head(const Model<T>& model, const std::vector<DenseRef>& refs, const EncoderTrace<T>& enc) {
  DenseStackTrace<T> tr;
  const DenseRef& first = refs.front();
  const auto wf = model.tensor(first.w);
  MatX<T> pre = row_stable_product(enc.skip, wf);
  const MatX<T> global_part = row_stable_product(enc.global, model.tensor(first.w_global));
  const auto bias = model.tensor(first.b).row(0);
  for (std::size_t b = 0; b < enc.batch(); ++b) {
    const Eigen::Index begin = enc.offsets[b];
    const Eigen::Index count = enc.offsets[b + 1] - begin;
    pre.middleRows(begin, count).rowwise() += global_part.row(static_cast<Eigen::Index>(b)) + bias;
  }
  run_stack<T>(model, refs, std::move(pre), tr, 0.0, nullptr);
  return tr;
}

// Backprop through a dense stack whose first layer is handled by the caller.
// Returns the gradient w.r.t. the first layer's pre-activation.
template <class T>
MatX<T> backprop_stack(const Model<T>& model, const std::vector<DenseRef>& refs, const DenseStackTrace<T>& tr,
                       const MatX<T>& d_output, Gradients<T>& g) {
  const ParamLayout& layout = model.layout();
  MatX<T> dz = d_output;
  for (std::size_t k = refs.size(); k-- > 1;) {
    const MatX<T> a = tr.hidden_out(k - 1);
    grad_tensor(layout, g, refs[k].w).noalias() += a.transpose() * dz;
    grad_tensor(layout, g, refs[k].b).row(0) += dz.colwise().sum();
    MatX<T> da = dz * model.tensor(refs[k].w).transpose();
    if (tr.mask[k - 1].size() > 0) da = da.cwiseProduct(tr.mask[k - 1]);
    dz = da.cwiseProduct((tr.relu[k - 1].array() > T(0)).template cast<T>().matrix());
  }
  return dz;
}

template <class T>
void backprop_point_head(const Model<T>& model, const std::vector<DenseRef>& refs, const DenseStackTrace<T>& tr,
                         const MatX<T>& d_output, const EncoderTrace<T>& enc, MatX<T>& d_global, MatX<T>& d_skip,
                         Gradients<T>& g) {
  const ParamLayout& layout = model.layout();
  const MatX<T> dz = backprop_stack(model, refs, tr, d_output, g);
  const DenseRef& first = refs.front();
  grad_tensor(layout, g, first.w).noalias() += enc.skip.transpose() * dz;
  grad_tensor(layout, g, first.b).row(0) += dz.colwise().sum();
  d_skip.noalias() += dz * model.tensor(first.w).transpose();
  MatX<T> per_cloud(static_cast<Eigen::Index>(enc.batch()), dz.cols());
  for (std::size_t b = 0; b < enc.batch(); ++b) {
    const Eigen::Index begin = enc.offsets[b];
    per_cloud.row(static_cast<Eigen::Index>(b)) = dz.middleRows(begin, enc.offsets[b + 1] - begin).colwise().sum();
  }
  grad_tensor(layout, g, first.w_global).noalias() += enc.global.transpose() * per_cloud;
  d_global.noalias() += per_cloud * model.tensor(first.w_global).transpose();
}

}  // namespace

template <class T>
EncoderTrace<T> encode(const Model<T>& model, const std::vector<PointCloud>& clouds) {
  if (clouds.empty()) throw InvalidArgument("encode needs at least one cloud");
  EncoderTrace<T> enc;
  enc.offsets.push_back(0);
  for (const PointCloud& c : clouds) {
    if (c.empty()) throw InvalidArgument("cannot encode an empty cloud");
    enc.offsets.push_back(enc.offsets.back() + static_cast<Eigen::Index>(c.size()));
  }
  const Eigen::Index total = enc.offsets.back();
  enc.input.resize(total, 3);
  for (std::size_t b = 0; b < clouds.size(); ++b) {
    enc.input.middleRows(enc.offsets[b], static_cast<Eigen::Index>(clouds[b].size())) =
        clouds[b].points().template cast<T>();
  }

  const ParamLayout& layout = model.layout();
  const MatX<T>* x = &enc.input;
  for (const DenseRef& r : layout.encoder) {
    MatX<T> h = affine(model, *x, r);
    relu_inplace(h);
    enc.layers.push_back(std::move(h));
    x = &enc.layers.back();
  }
  const MatX<T>& top = enc.layers.back();
  check_finite(top);

  const Eigen::Index width = top.cols();
  const auto batch = static_cast<Eigen::Index>(clouds.size());
  enc.global.resize(batch, width);
  enc.argmax.resize(batch, width);
  for (Eigen::Index b = 0; b < batch; ++b) {
    const Eigen::Index begin = enc.offsets[static_cast<std::size_t>(b)];
    const Eigen::Index end = enc.offsets[static_cast<std::size_t>(b) + 1];
    enc.global.row(b) = top.row(begin);
    enc.argmax.row(b).setConstant(begin);
    for (Eigen::Index r = begin + 1; r < end; ++r) {
      for (Eigen::Index j = 0; j < width; ++j) {
        if (top(r, j) > enc.global(b, j)) {
          enc.global(b, j) = top(r, j);
          enc.argmax(b, j) = r;
        }
      }
    }
  }

  const std::size_t point_layers = model.shape().point_widths.size();
  enc.skip.resize(total, model.shape().skip_width());
  Eigen::Index col = 0;
  for (std::size_t l = 0; l < point_layers; ++l) {
    enc.skip.middleCols(col, enc.layers[l].cols()) = enc.layers[l];
    col += enc.layers[l].cols();
  }
  return enc;
}

template <class T>
DenseStackTrace<T> head_sup(const Model<T>& model, const EncoderTrace<T>& enc, Mode mode, std::uint64_t dropout_seed) {
  const auto& refs = model.layout().sup;
  if (refs.empty()) throw InvalidArgument("model has no classification head");
  DenseStackTrace<T> tr;
  tr.input = enc.global;
  Rng rng = make_rng(dropout_seed);
  run_stack<T>(model, refs, affine(model, enc.global, refs.front()), tr, model.shape().dropout,
               mode == Mode::Train ? &rng : nullptr);
  return tr;
}

template <class T>
DenseStackTrace<T> head_ssl(const Model<T>& model, const EncoderTrace<T>& enc) {
  return point_head(model, model.layout().ssl, enc);
}

template <class T>
DenseStackTrace<T> head_seg(const Model<T>& model, const EncoderTrace<T>& enc) {
  if (model.layout().seg.empty()) throw InvalidArgument("model has no segmentation head");
  return point_head(model, model.layout().seg, enc);
}

template <class T>
void backward(const Model<T>& model, const ForwardTrace<T>& trace, const OutputGrads<T>& upstream,
              Gradients<T>& grads) {
  const ParamLayout& layout = model.layout();
  if (trace.param_count != model.params().size() || grads.values.size() != model.params().size())
    throw InvalidArgument("trace does not match model parameters");
  const EncoderTrace<T>& enc = trace.encoder;
  if (enc.layers.size() != layout.encoder.size()) throw InvalidArgument("trace does not match model layers");

  const auto batch = static_cast<Eigen::Index>(enc.batch());
  const Eigen::Index total = enc.input.rows();
  MatX<T> d_global = MatX<T>::Zero(batch, model.shape().global_width);
  MatX<T> d_skip = MatX<T>::Zero(total, model.shape().skip_width());
  bool any_skip = false;

  if (upstream.logits != nullptr) {
    if (!trace.sup) throw InvalidArgument("logit gradient without a classification trace");
    const auto& refs = layout.sup;
    const MatX<T> dz = backprop_stack(model, refs, *trace.sup, *upstream.logits, grads);
    grad_tensor(layout, grads, refs.front().w).noalias() += trace.sup->input.transpose() * dz;
    grad_tensor(layout, grads, refs.front().b).row(0) += dz.colwise().sum();
    d_global.noalias() += dz * model.tensor(refs.front().w).transpose();
  }
  if (upstream.reconstruction != nullptr) {
    if (!trace.ssl) throw InvalidArgument("reconstruction gradient without an h_SSL trace");
    backprop_point_head(model, layout.ssl, *trace.ssl, *upstream.reconstruction, enc, d_global, d_skip, grads);
    any_skip = true;
  }
  if (upstream.seg_logits != nullptr) {
    if (!trace.seg) throw InvalidArgument("segmentation gradient without a segmentation trace");
    backprop_point_head(model, layout.seg, *trace.seg, *upstream.seg_logits, enc, d_global, d_skip, grads);
    any_skip = true;
  }

  // Global-width layer: only argmax rows receive gradient through the max-pool.
  const std::size_t top = layout.encoder.size() - 1;
  const MatX<T>& below = enc.layers[top - 1];
  const MatX<T>& top_act = enc.layers[top];
  const auto w_top = model.tensor(layout.encoder[top].w);
  auto gw_top = grad_tensor(layout, grads, layout.encoder[top].w);
  auto gb_top = grad_tensor(layout, grads, layout.encoder[top].b);
  MatX<T> d_below = MatX<T>::Zero(total, below.cols());
  const MatX<T> w_top_t = w_top.transpose();
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (Eigen::Index j = 0; j < d_global.cols(); ++j) {
      const T dz = d_global(b, j);
      if (dz == T(0)) continue;
      const Eigen::Index r = enc.argmax(b, j);
      if (!(top_act(r, j) > T(0))) continue;
      gb_top(0, j) += dz;
      gw_top.col(j) += dz * below.row(r).transpose();
      d_below.row(r) += dz * w_top_t.row(j);
    }
  }

  // Per-point layers, adding the skip-connection gradient of each layer.
  const std::vector<int>& widths = model.shape().point_widths;
  Eigen::Index skip_col = model.shape().skip_width();
  MatX<T> dh = std::move(d_below);
  for (std::size_t l = top; l-- > 0;) {
    skip_col -= widths[l];
    if (any_skip) dh += d_skip.middleCols(skip_col, widths[l]);
    const MatX<T> dz = dh.cwiseProduct((enc.layers[l].array() > T(0)).template cast<T>().matrix());
    const MatX<T>& x = l == 0 ? enc.input : enc.layers[l - 1];
    grad_tensor(layout, grads, layout.encoder[l].w).noalias() += x.transpose() * dz;
    grad_tensor(layout, grads, layout.encoder[l].b).row(0) += dz.colwise().sum();
    if (l > 0) dh = dz * model.tensor(layout.encoder[l].w).transpose();
  }
}

#define DEFREC_INSTANTIATE(T)                                                                              \
  template struct EncoderTrace<T>;                                                                         \
  template struct DenseStackTrace<T>;                                                                      \
  template EncoderTrace<T> encode<T>(const Model<T>&, const std::vector<PointCloud>&);                     \
  template DenseStackTrace<T> head_sup<T>(const Model<T>&, const EncoderTrace<T>&, Mode, std::uint64_t);   \
  template DenseStackTrace<T> head_ssl<T>(const Model<T>&, const EncoderTrace<T>&);                        \
  template DenseStackTrace<T> head_seg<T>(const Model<T>&, const EncoderTrace<T>&);                        \
  template void backward<T>(const Model<T>&, const ForwardTrace<T>&, const OutputGrads<T>&, Gradients<T>&);

DEFREC_INSTANTIATE(float)
DEFREC_INSTANTIATE(double)
#undef DEFREC_INSTANTIATE

Eigen::MatrixXd extract_features(const Model<float>& model, const std::vector<PointCloud>& clouds,
                                 std::size_t batch_size) {
  if (model.shape().segmentation) throw InvalidArgument("feature extraction needs a classification model");
  if (model.shape().sup_widths.empty()) throw InvalidArgument("h_sup has no hidden layer to read features from");
  const auto width = static_cast<Eigen::Index>(model.shape().sup_widths.back());
  Eigen::MatrixXd out(static_cast<Eigen::Index>(clouds.size()), width);
  for (std::size_t start = 0; start < clouds.size(); start += batch_size) {
    const std::size_t end = std::min(clouds.size(), start + batch_size);
    std::vector<PointCloud> chunk(clouds.begin() + static_cast<std::ptrdiff_t>(start),
                                  clouds.begin() + static_cast<std::ptrdiff_t>(end));
    const auto enc = encode(model, chunk);
    const auto sup = head_sup(model, enc, Mode::Eval);
    out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) =
        sup.relu.back().cast<double>();
  }
  return out;
}

Eigen::MatrixXd point_features(const Model<float>& model, const PointCloud& cloud, int layer) {
  const auto enc = encode(model, std::vector<PointCloud>{cloud});
  return enc.layer_features(0, layer).cast<double>();
}

}  // namespace defrec
