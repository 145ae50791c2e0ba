#include "mmxai/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace mmxai {

namespace {

constexpr double kProbClamp = 1e-12;

void check_finite(const std::vector<double>& data, const char* op) {
  for (double v : data) {
    if (!std::isfinite(v)) {
      throw std::runtime_error(std::string(op) + ": non-finite value produced");
    }
  }
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Parameter::Parameter(std::string name, Shape shape)
    : name(std::move(name)), shape(std::move(shape)) {
  for (std::size_t d : this->shape) {
    if (d == 0) throw std::invalid_argument("Parameter: zero extent in shape");
  }
  value.assign(shape_size(this->shape), 0.0);
  grad.assign(value.size(), 0.0);
}

void Parameter::zero_grad() {
  std::fill(grad.begin(), grad.end(), 0.0);
}

const Shape& Tensor::shape() const { return tape_->node(id_).shape; }
const std::vector<double>& Tensor::value() const { return tape_->node(id_).value; }
bool Tensor::requires_grad() const { return tape_->node(id_).requires_grad; }
std::size_t Tensor::size() const { return tape_->node(id_).value.size(); }

std::vector<double> Tensor::grad() const {
  const auto& n = tape_->node(id_);
  if (!n.requires_grad) return std::vector<double>(n.value.size(), 0.0);
  return n.grad;
}

double Tensor::scalar() const {
  const auto& n = tape_->node(id_);
  if (n.value.size() != 1) {
    throw std::runtime_error("Tensor::scalar: tensor has shape " + shape_str(n.shape));
  }
  return n.value[0];
}

Tensor Tape::make_node(Shape shape, std::vector<double> value, bool requires_grad,
                       std::function<void(Tape&)> backward_fn, const char* op) {
  if (shape_size(shape) != value.size()) {
    throw std::invalid_argument(std::string(op) + ": shape " + shape_str(shape) +
                                " does not match data length " + std::to_string(value.size()));
  }
  check_finite(value, op);
  Node n;
  n.shape = std::move(shape);
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.grad.assign(n.value.size(), 0.0);
  n.backward_fn = std::move(backward_fn);
  nodes_.push_back(std::move(n));
  return Tensor(this, nodes_.size() - 1);
}

void Tape::check_same_tape(const Tensor& t, const char* op) const {
  if (t.tape_ != this) {
    throw std::invalid_argument(std::string(op) + ": tensor belongs to a different tape");
  }
}

Tensor Tape::input(Shape shape, std::vector<double> data, bool requires_grad) {
  return make_node(std::move(shape), std::move(data), requires_grad, nullptr, "input");
}

Tensor Tape::scalar_input(double v, bool requires_grad) {
  return make_node({1}, {v}, requires_grad, nullptr, "input");
}

Tensor Tape::param(Parameter& p) {
  Tensor t = make_node(p.shape, p.value, true, nullptr, "param");
  param_links_.push_back({t.id_, &p});
  return t;
}

Tensor Tape::matmul(Tensor a, Tensor b) {
  check_same_tape(a, "matmul");
  check_same_tape(b, "matmul");
  const Node& na = node(a.id_);
  const Node& nb = node(b.id_);
  if (na.shape.size() != 2 || nb.shape.size() != 2 || na.shape[1] != nb.shape[0]) {
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(na.shape) +
                                " x " + shape_str(nb.shape));
  }
  const std::size_t rows = na.shape[0], inner = na.shape[1], cols = nb.shape[1];
  std::vector<double> out(rows * cols, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* arow = na.value.data() + i * inner;
    double* orow = out.data() + i * cols;
    for (std::size_t k = 0; k < inner; ++k) {
      const double av = arow[k];
      const double* brow = nb.value.data() + k * cols;
      for (std::size_t j = 0; j < cols; ++j) orow[j] += av * brow[j];
    }
  }
  bool req = na.requires_grad || nb.requires_grad;
  Tensor out_t = make_node({rows, cols}, std::move(out), req, nullptr, "matmul");
  if (req) {
    const std::size_t aid = a.id_, bid = b.id_, oid = out_t.id_;
    node(oid).backward_fn = [aid, bid, oid, rows, inner, cols](Tape& tp) {
      const std::vector<double>& go = tp.node(oid).grad;
      Node& an = tp.node(aid);
      Node& bn = tp.node(bid);
      if (an.requires_grad) {
        // dA = dO * B^T
        for (std::size_t i = 0; i < rows; ++i) {
          const double* grow = go.data() + i * cols;
          double* garow = an.grad.data() + i * inner;
          for (std::size_t k = 0; k < inner; ++k) {
            const double* brow = bn.value.data() + k * cols;
            double acc = 0.0;
            for (std::size_t j = 0; j < cols; ++j) acc += grow[j] * brow[j];
            garow[k] += acc;
          }
        }
      }
      if (bn.requires_grad) {
        // dB = A^T * dO
        for (std::size_t k = 0; k < inner; ++k) {
          double* gbrow = bn.grad.data() + k * cols;
          for (std::size_t i = 0; i < rows; ++i) {
            const double av = an.value[i * inner + k];
            const double* grow = go.data() + i * cols;
            for (std::size_t j = 0; j < cols; ++j) gbrow[j] += av * grow[j];
          }
        }
      }
    };
  }
  return out_t;
}

Tensor Tape::add(Tensor a, Tensor b) {
  check_same_tape(a, "add");
  check_same_tape(b, "add");
  const Node& na = node(a.id_);
  const Node& nb = node(b.id_);
  if (na.shape != nb.shape) {
    throw std::invalid_argument("add: shape mismatch " + shape_str(na.shape) + " vs " +
                                shape_str(nb.shape));
  }
  std::vector<double> out(na.value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = na.value[i] + nb.value[i];
  bool req = na.requires_grad || nb.requires_grad;
  Tensor out_t = make_node(na.shape, std::move(out), req, nullptr, "add");
  if (req) {
    const std::size_t aid = a.id_, bid = b.id_, oid = out_t.id_;
    node(oid).backward_fn = [aid, bid, oid](Tape& tp) {
      const std::vector<double>& go = tp.node(oid).grad;
      Node& an = tp.node(aid);
      Node& bn = tp.node(bid);
      if (an.requires_grad)
        for (std::size_t i = 0; i < go.size(); ++i) an.grad[i] += go[i];
      if (bn.requires_grad)
        for (std::size_t i = 0; i < go.size(); ++i) bn.grad[i] += go[i];
    };
  }
  return out_t;
}

Tensor Tape::add_row_bias(Tensor m, Tensor bias) {
  check_same_tape(m, "add_row_bias");
  check_same_tape(bias, "add_row_bias");
  const Node& nm = node(m.id_);
  const Node& nb = node(bias.id_);
  if (nm.shape.size() != 2 || nb.shape.size() != 1 || nm.shape[1] != nb.shape[0]) {
    throw std::invalid_argument("add_row_bias: incompatible shapes " + shape_str(nm.shape) +
                                " + " + shape_str(nb.shape));
  }
  const std::size_t rows = nm.shape[0], cols = nm.shape[1];
  std::vector<double> out(nm.value.size());
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      out[i * cols + j] = nm.value[i * cols + j] + nb.value[j];
  bool req = nm.requires_grad || nb.requires_grad;
  Tensor out_t = make_node(nm.shape, std::move(out), req, nullptr, "add_row_bias");
  if (req) {
    const std::size_t mid = m.id_, bid = bias.id_, oid = out_t.id_;
    node(oid).backward_fn = [mid, bid, oid, rows, cols](Tape& tp) {
      const std::vector<double>& go = tp.node(oid).grad;
      Node& mn = tp.node(mid);
      Node& bn = tp.node(bid);
      if (mn.requires_grad)
        for (std::size_t i = 0; i < go.size(); ++i) mn.grad[i] += go[i];
      if (bn.requires_grad)
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < cols; ++j) bn.grad[j] += go[i * cols + j];
    };
  }
  return out_t;
}

Tensor Tape::add_channel_bias(Tensor t, Tensor bias) {
  check_same_tape(t, "add_channel_bias");
  check_same_tape(bias, "add_channel_bias");
  const Node& nt = node(t.id_);
  const Node& nb = node(bias.id_);
  if (nt.shape.size() != 4 || nb.shape.size() != 1 || nt.shape[1] != nb.shape[0]) {
    throw std::invalid_argument("add_channel_bias: incompatible shapes " + shape_str(nt.shape) +
                                " + " + shape_str(nb.shape));
  }
  const std::size_t batch = nt.shape[0], chans = nt.shape[1];
  const std::size_t plane = nt.shape[2] * nt.shape[3];
  std::vector<double> out(nt.value.size());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < chans; ++c) {
      const double bv = nb.value[c];
      const std::size_t base = (b * chans + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) out[base + i] = nt.value[base + i] + bv;
    }
  bool req = nt.requires_grad || nb.requires_grad;
  Tensor out_t = make_node(nt.shape, std::move(out), req, nullptr, "add_channel_bias");
  if (req) {
    const std::size_t tid = t.id_, bid = bias.id_, oid = out_t.id_;
    node(oid).backward_fn = [tid, bid, oid, batch, chans, plane](Tape& tp) {
      const std::vector<double>& go = tp.node(oid).grad;
      Node& tn = tp.node(tid);
      Node& bn = tp.node(bid);
      if (tn.requires_grad)
        for (std::size_t i = 0; i < go.size(); ++i) tn.grad[i] += go[i];
      if (bn.requires_grad)
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t c = 0; c < chans; ++c) {
            const std::size_t base = (b * chans + c) * plane;
            double acc = 0.0;
            for (std::size_t i = 0; i < plane; ++i) acc += go[base + i];
            bn.grad[c] += acc;
          }
    };
  }
  return out_t;
}

Tensor Tape::mul(Tensor a, Tensor b) {
  check_same_tape(a, "mul");
  check_same_tape(b, "mul");
  const Node& na = node(a.id_);
  const Node& nb = node(b.id_);
  if (na.shape != nb.shape) {
    throw std::invalid_argument("mul: shape mismatch " + shape_str(na.shape) + " vs " +
                                shape_str(nb.shape));
  }
  std::vector<double> out(na.value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = na.value[i] * nb.value[i];
  bool req = na.requires_grad || nb.requires_grad;
  Tensor out_t = make_node(na.shape, std::move(out), req, nullptr, "mul");
  if (req) {
    const std::size_t aid = a.id_, bid = b.id_, oid = out_t.id_;
    node(oid).backward_fn = [aid, bid, oid](Tape& tp) {
      const std::vector<double>& go = tp.node(oid).grad;
      Node& an = tp.node(aid);
      Node& bn = tp.node(bid);
      if (an.requires_grad)
        for (std::size_t i = 0; i < go.size(); ++i) an.grad[i] += go[i] * bn.value[i];
      if (bn.requires_grad)
        for (std::size_t i = 0; i < go.size(); ++i) bn.grad[i] += go[i] * an.value[i];
    };
  }
  return out_t;
}

Tensor Tape::scale(Tensor a, double k) {
  check_same_tape(a, "scale");
  if (!std::isfinite(k)) throw std::invalid_argument("scale: non-finite factor");
  const Node& na = node(a.id_);
  std::vector<double> out(na.value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = na.value[i] * k;
  bool req = na.requires_grad;
  Tensor out_t = make_node(na.shape, std::move(out), req, nullptr, "scale");
  if (req) {
    const std::size_t aid = a.id_, oid = out_t.id_;
    node(oid).backward_fn = [aid, oid, k](Tape& tp) {
      const std::vector<double>& go = tp.node(oid).grad;
      Node& an = tp.node(aid);
      for (std::size_t i = 0; i < go.size(); ++i) an.grad[i] += go[i] * k;
    };
  }
  return out_t;
}

Tensor Tape::sum(Tensor a) {
  check_same_tape(a, "sum");
  const Node& na = node(a.id_);
  double acc = 0.0;
  for (double v : na.value) acc += v;
  bool req = na.requires_grad;
  Tensor out_t = make_node({1}, {acc}, req, nullptr, "sum");
  if (req) {
    const std::size_t aid = a.id_, oid = out_t.id_;
    node(oid).backward_fn = [aid, oid](Tape& tp) {
      const double g = tp.node(oid).grad[0];
      Node& an = tp.node(aid);
      for (double& gv : an.grad) gv += g;
    };
  }
  return out_t;
}

Tensor Tape::relu(Tensor a) {
  check_same_tape(a, "relu");
  const Node& na = node(a.id_);
  std::vector<double> out(na.value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = na.value[i] > 0.0 ? na.value[i] : 0.0;
  bool req = na.requires_grad;
  Tensor out_t = make_node(na.shape, std::move(out), req, nullptr, "relu");
  if (req) {
    const std::size_t aid = a.id_, oid = out_t.id_;
    node(oid).backward_fn = [aid, oid](Tape& tp) {
      const std::vector<double>& go = tp.node(oid).grad;
      Node& an = tp.node(aid);
      for (std::size_t i = 0; i < go.size(); ++i)
        if (an.value[i] > 0.0) an.grad[i] += go[i];
    };
  }
  return out_t;
}

Tensor Tape::sigmoid(Tensor a) {
  check_same_tape(a, "sigmoid");
  const Node& na = node(a.id_);
  std::vector<double> out(na.value.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = na.value[i];
    if (x >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-x));
    } else {
      const double e = std::exp(x);
      out[i] = e / (1.0 + e);
    }
  }
  bool req = na.requires_grad;
  Tensor out_t = make_node(na.shape, std::move(out), req, nullptr, "sigmoid");
  if (req) {
    const std::size_t aid = a.id_, oid = out_t.id_;
    node(oid).backward_fn = [aid, oid](Tape& tp) {
      const Node& on = tp.node(oid);
      Node& an = tp.node(aid);
      for (std::size_t i = 0; i < on.grad.size(); ++i) {
        const double s = on.value[i];
        an.grad[i] += on.grad[i] * s * (1.0 - s);
      }
    };
  }
  return out_t;
}

Tensor Tape::softmax(Tensor a) {
  check_same_tape(a, "softmax");
  const Node& na = node(a.id_);
  std::size_t rows = 1, cols = 0;
  if (na.shape.size() == 1) {
    cols = na.shape[0];
  } else if (na.shape.size() == 2) {
    rows = na.shape[0];
    cols = na.shape[1];
  } else {
    throw std::invalid_argument("softmax: expected rank 1 or 2, got " + shape_str(na.shape));
  }
  if (cols < 2) {
    throw std::invalid_argument("softmax: needs at least 2 classes, got " + shape_str(na.shape));
  }
  std::vector<double> out(na.value.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = na.value.data() + r * cols;
    double* o = out.data() + r * cols;
    double mx = in[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, in[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      o[j] = std::exp(in[j] - mx);
      denom += o[j];
    }
    for (std::size_t j = 0; j < cols; ++j) o[j] /= denom;
  }
  bool req = na.requires_grad;
  Tensor out_t = make_node(na.shape, std::move(out), req, nullptr, "softmax");
  if (req) {
    const std::size_t aid = a.id_, oid = out_t.id_;
    node(oid).backward_fn = [aid, oid, rows, cols](Tape& tp) {
      const Node& on = tp.node(oid);
      Node& an = tp.node(aid);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = on.value.data() + r * cols;
        const double* gy = on.grad.data() + r * cols;
        double dot = 0.0;
        for (std::size_t j = 0; j < cols; ++j) dot += gy[j] * y[j];
        double* gx = an.grad.data() + r * cols;
        for (std::size_t j = 0; j < cols; ++j) gx[j] += y[j] * (gy[j] - dot);
      }
    };
  }
  return out_t;
}

Tensor Tape::conv2d(Tensor img, Tensor kernel, std::size_t stride, std::size_t pad) {
  check_same_tape(img, "conv2d");
  check_same_tape(kernel, "conv2d");
  const Node& ni = node(img.id_);
  const Node& nk = node(kernel.id_);
  if (ni.shape.size() != 4 || nk.shape.size() != 4 || ni.shape[1] != nk.shape[1]) {
    throw std::invalid_argument("conv2d: incompatible shapes " + shape_str(ni.shape) + " * " +
                                shape_str(nk.shape));
  }
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  const std::size_t batch = ni.shape[0], cin = ni.shape[1], h = ni.shape[2], w = ni.shape[3];
  const std::size_t cout = nk.shape[0], kh = nk.shape[2], kw = nk.shape[3];
  if (h + 2 * pad < kh || w + 2 * pad < kw) {
    throw std::invalid_argument("conv2d: kernel " + shape_str(nk.shape) +
                                " larger than padded input " + shape_str(ni.shape));
  }
  const std::size_t ho = (h + 2 * pad - kh) / stride + 1;
  const std::size_t wo = (w + 2 * pad - kw) / stride + 1;
  std::vector<double> out(batch * cout * ho * wo, 0.0);
  // Kernel-position-outer loops: the inner ox loop walks contiguous output
  // memory with precomputed valid ranges, so no bounds checks remain inside.
  const auto out_range = [&](std::size_t k, std::size_t extent,
                             std::size_t n_out) -> std::pair<std::size_t, std::size_t> {
    // valid o: 0 <= o*stride + k - pad < extent
    const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(pad);
    std::size_t lo = 0;
    if (off < 0) lo = static_cast<std::size_t>((-off + static_cast<std::ptrdiff_t>(stride) - 1) /
                                               static_cast<std::ptrdiff_t>(stride));
    const std::ptrdiff_t max_i = static_cast<std::ptrdiff_t>(extent) - 1 - off;
    if (max_i < 0) return {1, 0};
    const std::size_t hi =
        std::min(n_out - 1, static_cast<std::size_t>(max_i) / stride);
    return {lo, hi};
  };
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t co = 0; co < cout; ++co) {
      double* oplane = out.data() + (b * cout + co) * ho * wo;
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const double* iplane = ni.value.data() + (b * cin + ci) * h * w;
        const double* kplane = nk.value.data() + (co * cin + ci) * kh * kw;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const auto [oy_lo, oy_hi] = out_range(ky, h, ho);
          if (oy_lo > oy_hi) continue;
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const double kv = kplane[ky * kw + kx];
            const auto [ox_lo, ox_hi] = out_range(kx, w, wo);
            if (ox_lo > ox_hi) continue;
            for (std::size_t oy = oy_lo; oy <= oy_hi; ++oy) {
              const std::size_t iy = oy * stride + ky - pad;
              const double* irow = iplane + iy * w + (ox_lo * stride + kx - pad);
              double* orow = oplane + oy * wo;
              if (stride == 1) {
                for (std::size_t ox = ox_lo; ox <= ox_hi; ++ox) {
                  orow[ox] += kv * irow[ox - ox_lo];
                }
              } else {
                for (std::size_t ox = ox_lo; ox <= ox_hi; ++ox) {
                  orow[ox] += kv * irow[(ox - ox_lo) * stride];
                }
              }
            }
          }
        }
      }
    }
  }
  bool req = ni.requires_grad || nk.requires_grad;
  Tensor out_t = make_node({batch, cout, ho, wo}, std::move(out), req, nullptr, "conv2d");
  if (req) {
    const std::size_t iid = img.id_, kid = kernel.id_, oid = out_t.id_;
    node(oid).backward_fn = [iid, kid, oid, batch, cin, h, w, cout, kh, kw, ho, wo, stride,
                             pad](Tape& tp) {
      const std::vector<double>& go = tp.node(oid).grad;
      Node& in = tp.node(iid);
      Node& kn = tp.node(kid);
      const bool need_gi = in.requires_grad;
      const bool need_gk = kn.requires_grad;
      const auto out_range = [&](std::size_t k, std::size_t extent,
                                 std::size_t n_out) -> std::pair<std::size_t, std::size_t> {
        const std::ptrdiff_t off =
            static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(pad);
        std::size_t lo = 0;
        if (off < 0) {
          lo = static_cast<std::size_t>((-off + static_cast<std::ptrdiff_t>(stride) - 1) /
                                        static_cast<std::ptrdiff_t>(stride));
        }
        const std::ptrdiff_t max_i = static_cast<std::ptrdiff_t>(extent) - 1 - off;
        if (max_i < 0) return {1, 0};
        const std::size_t hi = std::min(n_out - 1, static_cast<std::size_t>(max_i) / stride);
        return {lo, hi};
      };
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t co = 0; co < cout; ++co) {
          const double* gplane = go.data() + (b * cout + co) * ho * wo;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double* iplane = in.value.data() + (b * cin + ci) * h * w;
            const double* kplane = kn.value.data() + (co * cin + ci) * kh * kw;
            double* giplane = need_gi ? in.grad.data() + (b * cin + ci) * h * w : nullptr;
            double* gkplane = need_gk ? kn.grad.data() + (co * cin + ci) * kh * kw : nullptr;
            for (std::size_t ky = 0; ky < kh; ++ky) {
              const auto [oy_lo, oy_hi] = out_range(ky, h, ho);
              if (oy_lo > oy_hi) continue;
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const auto [ox_lo, ox_hi] = out_range(kx, w, wo);
                if (ox_lo > ox_hi) continue;
                const double kv = kplane[ky * kw + kx];
                double kacc = 0.0;
                for (std::size_t oy = oy_lo; oy <= oy_hi; ++oy) {
                  const std::size_t iy = oy * stride + ky - pad;
                  const std::size_t ix0 = ox_lo * stride + kx - pad;
                  const double* grow = gplane + oy * wo;
                  const double* irow = iplane + iy * w + ix0;
                  double* girow = need_gi ? giplane + iy * w + ix0 : nullptr;
                  if (stride == 1) {
                    for (std::size_t ox = ox_lo; ox <= ox_hi; ++ox) {
                      const double g = grow[ox];
                      if (need_gi) girow[ox - ox_lo] += g * kv;
                      kacc += g * irow[ox - ox_lo];
                    }
                  } else {
                    for (std::size_t ox = ox_lo; ox <= ox_hi; ++ox) {
                      const double g = grow[ox];
                      if (need_gi) girow[(ox - ox_lo) * stride] += g * kv;
                      kacc += g * irow[(ox - ox_lo) * stride];
                    }
                  }
                }
                if (need_gk) gkplane[ky * kw + kx] += kacc;
              }
            }
          }
        }
      }
    };
  }
  return out_t;
}

Tensor Tape::upsample_zero(Tensor img, std::size_t factor) {
  check_same_tape(img, "upsample_zero");
  if (factor == 0) throw std::invalid_argument("upsample_zero: factor must be positive");
  const Node& ni = node(img.id_);
  if (ni.shape.size() != 4) {
    throw std::invalid_argument("upsample_zero: expected rank 4, got " + shape_str(ni.shape));
  }
  const std::size_t batch = ni.shape[0], chans = ni.shape[1], h = ni.shape[2], w = ni.shape[3];
  const std::size_t ho = h * factor, wo = w * factor;
  std::vector<double> out(batch * chans * ho * wo, 0.0);
  for (std::size_t bc = 0; bc < batch * chans; ++bc) {
    const double* iplane = ni.value.data() + bc * h * w;
    double* oplane = out.data() + bc * ho * wo;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        oplane[(y * factor) * wo + x * factor] = iplane[y * w + x];
  }
  bool req = ni.requires_grad;
  Tensor out_t = make_node({batch, chans, ho, wo}, std::move(out), req, nullptr, "upsample_zero");
  if (req) {
    const std::size_t iid = img.id_, oid = out_t.id_;
    node(oid).backward_fn = [iid, oid, batch, chans, h, w, ho, wo, factor](Tape& tp) {
      const std::vector<double>& go = tp.node(oid).grad;
      Node& in = tp.node(iid);
      for (std::size_t bc = 0; bc < batch * chans; ++bc) {
        double* giplane = in.grad.data() + bc * h * w;
        const double* goplane = go.data() + bc * ho * wo;
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x)
            giplane[y * w + x] += goplane[(y * factor) * wo + x * factor];
      }
    };
  }
  return out_t;
}

Tensor Tape::reshape(Tensor a, Shape new_shape) {
  check_same_tape(a, "reshape");
  const Node& na = node(a.id_);
  if (shape_size(new_shape) != na.value.size()) {
    throw std::invalid_argument("reshape: cannot view " + shape_str(na.shape) + " as " +
                                shape_str(new_shape));
  }
  bool req = na.requires_grad;
  Tensor out_t = make_node(std::move(new_shape), na.value, req, nullptr, "reshape");
  if (req) {
    const std::size_t aid = a.id_, oid = out_t.id_;
    node(oid).backward_fn = [aid, oid](Tape& tp) {
      const std::vector<double>& go = tp.node(oid).grad;
      Node& an = tp.node(aid);
      for (std::size_t i = 0; i < go.size(); ++i) an.grad[i] += go[i];
    };
  }
  return out_t;
}

Tensor Tape::concat_cols(Tensor a, Tensor b) {
  check_same_tape(a, "concat_cols");
  check_same_tape(b, "concat_cols");
  const Node& na = node(a.id_);
  const Node& nb = node(b.id_);
  if (na.shape.size() != nb.shape.size() ||
      (na.shape.size() != 1 && na.shape.size() != 2) ||
      (na.shape.size() == 2 && na.shape[0] != nb.shape[0])) {
    throw std::invalid_argument("concat_cols: incompatible shapes " + shape_str(na.shape) +
                                " + " + shape_str(nb.shape));
  }
  const std::size_t rows = na.shape.size() == 2 ? na.shape[0] : 1;
  const std::size_t ca = na.shape.back(), cb = nb.shape.back();
  Shape out_shape = na.shape;
  out_shape.back() = ca + cb;
  std::vector<double> out(rows * (ca + cb));
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(na.value.data() + r * ca, ca, out.data() + r * (ca + cb));
    std::copy_n(nb.value.data() + r * cb, cb, out.data() + r * (ca + cb) + ca);
  }
  bool req = na.requires_grad || nb.requires_grad;
  Tensor out_t = make_node(std::move(out_shape), std::move(out), req, nullptr, "concat_cols");
  if (req) {
    const std::size_t aid = a.id_, bid = b.id_, oid = out_t.id_;
    node(oid).backward_fn = [aid, bid, oid, rows, ca, cb](Tape& tp) {
      const std::vector<double>& go = tp.node(oid).grad;
      Node& an = tp.node(aid);
      Node& bn = tp.node(bid);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* grow = go.data() + r * (ca + cb);
        if (an.requires_grad)
          for (std::size_t j = 0; j < ca; ++j) an.grad[r * ca + j] += grow[j];
        if (bn.requires_grad)
          for (std::size_t j = 0; j < cb; ++j) bn.grad[r * cb + j] += grow[ca + j];
      }
    };
  }
  return out_t;
}

Tensor Tape::select(Tensor a, std::size_t flat_index) {
  check_same_tape(a, "select");
  const Node& na = node(a.id_);
  if (flat_index >= na.value.size()) {
    throw std::invalid_argument("select: index " + std::to_string(flat_index) +
                                " out of range for " + shape_str(na.shape));
  }
  bool req = na.requires_grad;
  Tensor out_t = make_node({1}, {na.value[flat_index]}, req, nullptr, "select");
  if (req) {
    const std::size_t aid = a.id_, oid = out_t.id_;
    node(oid).backward_fn = [aid, oid, flat_index](Tape& tp) {
      tp.node(aid).grad[flat_index] += tp.node(oid).grad[0];
    };
  }
  return out_t;
}

Tensor Tape::mse(Tensor pred, Tensor target) {
  check_same_tape(pred, "mse");
  check_same_tape(target, "mse");
  const Node& np = node(pred.id_);
  const Node& nt = node(target.id_);
  if (np.shape != nt.shape) {
    throw std::invalid_argument("mse: shape mismatch " + shape_str(np.shape) + " vs " +
                                shape_str(nt.shape));
  }
  const std::size_t n = np.value.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = np.value[i] - nt.value[i];
    acc += d * d;
  }
  acc /= static_cast<double>(n);
  bool req = np.requires_grad || nt.requires_grad;
  Tensor out_t = make_node({1}, {acc}, req, nullptr, "mse");
  if (req) {
    const std::size_t pid = pred.id_, tid = target.id_, oid = out_t.id_;
    node(oid).backward_fn = [pid, tid, oid, n](Tape& tp) {
      const double g = tp.node(oid).grad[0] * 2.0 / static_cast<double>(n);
      Node& pn = tp.node(pid);
      Node& tn = tp.node(tid);
      for (std::size_t i = 0; i < n; ++i) {
        const double d = pn.value[i] - tn.value[i];
        if (pn.requires_grad) pn.grad[i] += g * d;
        if (tn.requires_grad) tn.grad[i] -= g * d;
      }
    };
  }
  return out_t;
}

Tensor Tape::cross_entropy(Tensor probs, const std::vector<std::size_t>& labels) {
  check_same_tape(probs, "cross_entropy");
  const Node& np = node(probs.id_);
  std::size_t rows = 1, cols = 0;
  if (np.shape.size() == 1) {
    cols = np.shape[0];
  } else if (np.shape.size() == 2) {
    rows = np.shape[0];
    cols = np.shape[1];
  } else {
    throw std::invalid_argument("cross_entropy: expected rank 1 or 2, got " +
                                shape_str(np.shape));
  }
  if (labels.size() != rows) {
    throw std::invalid_argument("cross_entropy: got " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(rows) + " rows");
  }
  double acc = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (labels[r] >= cols) {
      throw std::invalid_argument("cross_entropy: label " + std::to_string(labels[r]) +
                                  " out of range for " + std::to_string(cols) + " classes");
    }
    acc += -std::log(std::max(np.value[r * cols + labels[r]], kProbClamp));
  }
  acc /= static_cast<double>(rows);
  bool req = np.requires_grad;
  Tensor out_t = make_node({1}, {acc}, req, nullptr, "cross_entropy");
  if (req) {
    const std::size_t pid = probs.id_, oid = out_t.id_;
    std::vector<std::size_t> labs = labels;
    node(oid).backward_fn = [pid, oid, labs, rows, cols](Tape& tp) {
      const double g = tp.node(oid).grad[0] / static_cast<double>(rows);
      Node& pn = tp.node(pid);
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t idx = r * cols + labs[r];
        const double p = pn.value[idx];
        // Subgradient of -log(max(p, clamp)): flat once the clamp is active.
        if (p > kProbClamp) pn.grad[idx] += g * (-1.0 / p);
      }
    };
  }
  return out_t;
}

void Tape::backward(Tensor loss) {
  check_same_tape(loss, "backward");
  if (backward_done_) {
    throw std::runtime_error("backward: already run on this tape");
  }
  Node& ln = node(loss.id_);
  if (ln.value.size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(ln.shape));
  }
  backward_done_ = true;
  if (!ln.requires_grad) return;  // loss detached from every parameter
  ln.grad[0] = 1.0;
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.backward_fn) n.backward_fn(*this);
  }
  for (const ParamLink& link : param_links_) {
    const Node& n = nodes_[link.node_id];
    if (link.node_id > loss.id_) continue;
    for (std::size_t i = 0; i < n.grad.size(); ++i) link.param->grad[i] += n.grad[i];
  }
}

std::vector<double> finite_diff_gradient(
    const std::function<double(const std::vector<double>&)>& f,
    std::vector<double> x, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("finite_diff_gradient: eps must be positive");
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + eps;
    const double fp = f(x);
    x[i] = orig - eps;
    const double fm = f(x);
    x[i] = orig;
    grad[i] = (fp - fm) / (2.0 * eps);
  }
  return grad;
}

}  // namespace mmxai
