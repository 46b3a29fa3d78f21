#include "mobintent/autodiff.hpp"

#include <cmath>

namespace mobintent::ad {

const Eigen::MatrixXd& Var::value() const { return tape->node(idx).value; }

Var Tape::emit(Eigen::MatrixXd value, std::function<void()> back) {
  Node n;
  n.value = std::move(value);
  n.grad = Eigen::MatrixXd::Zero(n.value.rows(), n.value.cols());
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1, this};
}

Var Tape::constant(Eigen::MatrixXd v) { return emit(std::move(v)); }

Var Tape::param(const Eigen::MatrixXd& value, Eigen::MatrixXd& grad) {
  Var v = emit(value);
  nodes_.back().external_grad = &grad;
  return v;
}

void Tape::backward(Var loss) {
  require(loss.tape == this, "loss var belongs to a different tape");
  require(loss.value().rows() == 1 && loss.value().cols() == 1, "loss must be scalar");
  grad(loss.idx)(0, 0) = 1.0;
  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.back) n.back();
    if (n.external_grad) *n.external_grad += n.grad;
  }
}

namespace {
Tape& tape_of(Var a) { return *a.tape; }
}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a);
  require(a.cols() == b.rows(), "matmul shape mismatch");
  Eigen::MatrixXd v = a.value() * b.value();
  Var out = t.emit(std::move(v));
  int oi = out.idx, ai = a.idx, bi = b.idx;
  t.node(oi).back = [&t, oi, ai, bi] {
    const Eigen::MatrixXd& g = t.grad(oi);
    t.grad(ai) += g * t.node(bi).value.transpose();
    t.grad(bi) += t.node(ai).value.transpose() * g;
  };
  return out;
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a);
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add shape mismatch");
  Var out = t.emit(a.value() + b.value());
  int oi = out.idx, ai = a.idx, bi = b.idx;
  t.node(oi).back = [&t, oi, ai, bi] {
    t.grad(ai) += t.grad(oi);
    t.grad(bi) += t.grad(oi);
  };
  return out;
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a);
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub shape mismatch");
  Var out = t.emit(a.value() - b.value());
  int oi = out.idx, ai = a.idx, bi = b.idx;
  t.node(oi).back = [&t, oi, ai, bi] {
    t.grad(ai) += t.grad(oi);
    t.grad(bi) -= t.grad(oi);
  };
  return out;
}

Var cmul(Var a, Var b) {
  Tape& t = tape_of(a);
  require(a.rows() == b.rows() && a.cols() == b.cols(), "cmul shape mismatch");
  Var out = t.emit(a.value().cwiseProduct(b.value()));
  int oi = out.idx, ai = a.idx, bi = b.idx;
  t.node(oi).back = [&t, oi, ai, bi] {
    t.grad(ai) += t.grad(oi).cwiseProduct(t.node(bi).value);
    t.grad(bi) += t.grad(oi).cwiseProduct(t.node(ai).value);
  };
  return out;
}

Var scale(Var a, double s) {
  Tape& t = tape_of(a);
  Var out = t.emit(a.value() * s);
  int oi = out.idx, ai = a.idx;
  t.node(oi).back = [&t, oi, ai, s] { t.grad(ai) += t.grad(oi) * s; };
  return out;
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  Var out = t.emit(a.value().transpose());
  int oi = out.idx, ai = a.idx;
  t.node(oi).back = [&t, oi, ai] { t.grad(ai) += t.grad(oi).transpose(); };
  return out;
}

Var relu(Var a) {
  Tape& t = tape_of(a);
  Var out = t.emit(a.value().cwiseMax(0.0));
  int oi = out.idx, ai = a.idx;
  t.node(oi).back = [&t, oi, ai] {
    t.grad(ai) += t.grad(oi).cwiseProduct(
        (t.node(ai).value.array() > 0.0).cast<double>().matrix());
  };
  return out;
}

Var tanh_op(Var a) {
  Tape& t = tape_of(a);
  Var out = t.emit(a.value().array().tanh().matrix());
  int oi = out.idx, ai = a.idx;
  t.node(oi).back = [&t, oi, ai] {
    const Eigen::MatrixXd& y = t.node(oi).value;
    t.grad(ai) += t.grad(oi).cwiseProduct((1.0 - y.array().square()).matrix());
  };
  return out;
}

Var sigmoid(Var a) {
  Tape& t = tape_of(a);
  Eigen::MatrixXd y = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  Var out = t.emit(std::move(y));
  int oi = out.idx, ai = a.idx;
  t.node(oi).back = [&t, oi, ai] {
    const Eigen::ArrayXXd y2 = t.node(oi).value.array();
    t.grad(ai) += t.grad(oi).cwiseProduct((y2 * (1.0 - y2)).matrix());
  };
  return out;
}

Var softmax_rows(Var a) {
  Tape& t = tape_of(a);
  Eigen::MatrixXd y = a.value();
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    Eigen::ArrayXd row = y.row(r).array();
    row -= row.maxCoeff();
    row = row.exp();
    y.row(r) = (row / row.sum()).matrix();
  }
  Var out = t.emit(std::move(y));
  int oi = out.idx, ai = a.idx;
  t.node(oi).back = [&t, oi, ai] {
    const Eigen::MatrixXd& y2 = t.node(oi).value;
    const Eigen::MatrixXd& g = t.grad(oi);
    for (Eigen::Index r = 0; r < y2.rows(); ++r) {
      double dot = g.row(r).cwiseProduct(y2.row(r)).sum();
      t.grad(ai).row(r) += (g.row(r).array() - dot).matrix().cwiseProduct(y2.row(r));
    }
  };
  return out;
}

Var layernorm_rows(Var x, Var gamma, Var beta, double eps) {
  Tape& t = tape_of(x);
  require(gamma.rows() == 1 && gamma.cols() == x.cols(), "layernorm gamma shape");
  require(beta.rows() == 1 && beta.cols() == x.cols(), "layernorm beta shape");
  const Eigen::MatrixXd& xv = x.value();
  const Eigen::Index c = xv.cols();
  Eigen::MatrixXd xhat(xv.rows(), c);
  Eigen::VectorXd inv_sigma(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    double mean = xv.row(r).mean();
    double var = (xv.row(r).array() - mean).square().mean();
    double inv = 1.0 / std::sqrt(var + eps);
    inv_sigma[r] = inv;
    xhat.row(r) = ((xv.row(r).array() - mean) * inv).matrix();
  }
  Eigen::MatrixXd y =
      (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
      beta.value().row(0).array();
  Var out = t.emit(y.matrix());
  int oi = out.idx, xi = x.idx, gi = gamma.idx, bi = beta.idx;
  t.node(oi).back = [&t, oi, xi, gi, bi, xhat, inv_sigma, c] {
    const Eigen::MatrixXd& g = t.grad(oi);
    t.grad(gi).row(0) += g.cwiseProduct(xhat).colwise().sum();
    t.grad(bi).row(0) += g.colwise().sum();
    const Eigen::RowVectorXd gam = t.node(gi).value.row(0);
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      Eigen::RowVectorXd dxhat = g.row(r).cwiseProduct(gam);
      double m1 = dxhat.mean();
      double m2 = dxhat.cwiseProduct(xhat.row(r)).mean();
      t.grad(xi).row(r) +=
          inv_sigma[r] * (dxhat.array() - m1 - xhat.row(r).array() * m2).matrix();
    }
    (void)c;
  };
  return out;
}

Var mean_rows(Var a) {
  Tape& t = tape_of(a);
  Eigen::MatrixXd v = a.value().colwise().mean();
  Var out = t.emit(std::move(v));
  int oi = out.idx, ai = a.idx;
  const double inv = 1.0 / static_cast<double>(a.rows());
  t.node(oi).back = [&t, oi, ai, inv] {
    t.grad(ai).rowwise() += (t.grad(oi).row(0) * inv);
  };
  return out;
}

Var sum_all(Var a) {
  Tape& t = tape_of(a);
  Eigen::MatrixXd v(1, 1);
  v(0, 0) = a.value().sum();
  Var out = t.emit(std::move(v));
  int oi = out.idx, ai = a.idx;
  t.node(oi).back = [&t, oi, ai] {
    t.grad(ai).array() += t.grad(oi)(0, 0);
  };
  return out;
}

Var add_rowvec(Var a, Var bias) {
  Tape& t = tape_of(a);
  require(bias.rows() == 1 && bias.cols() == a.cols(), "bias shape mismatch");
  Eigen::MatrixXd v = a.value().rowwise() + bias.value().row(0);
  Var out = t.emit(std::move(v));
  int oi = out.idx, ai = a.idx, bi = bias.idx;
  t.node(oi).back = [&t, oi, ai, bi] {
    t.grad(ai) += t.grad(oi);
    t.grad(bi).row(0) += t.grad(oi).colwise().sum();
  };
  return out;
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols needs at least one part");
  Tape& t = tape_of(parts.front());
  Eigen::Index rows = parts.front().rows(), cols = 0;
  for (const auto& p : parts) {
    require(p.rows() == rows, "concat_cols row mismatch");
    cols += p.cols();
  }
  Eigen::MatrixXd v(rows, cols);
  Eigen::Index at = 0;
  std::vector<int> idxs;
  std::vector<Eigen::Index> widths;
  for (const auto& p : parts) {
    v.middleCols(at, p.cols()) = p.value();
    idxs.push_back(p.idx);
    widths.push_back(p.cols());
    at += p.cols();
  }
  Var out = t.emit(std::move(v));
  int oi = out.idx;
  t.node(oi).back = [&t, oi, idxs, widths] {
    Eigen::Index at2 = 0;
    for (std::size_t k = 0; k < idxs.size(); ++k) {
      t.grad(idxs[k]) += t.grad(oi).middleCols(at2, widths[k]);
      at2 += widths[k];
    }
  };
  return out;
}

Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows needs at least one part");
  Tape& t = tape_of(parts.front());
  Eigen::Index cols = parts.front().cols(), rows = 0;
  for (const auto& p : parts) {
    require(p.cols() == cols, "concat_rows col mismatch");
    rows += p.rows();
  }
  Eigen::MatrixXd v(rows, cols);
  Eigen::Index at = 0;
  std::vector<int> idxs;
  std::vector<Eigen::Index> heights;
  for (const auto& p : parts) {
    v.middleRows(at, p.rows()) = p.value();
    idxs.push_back(p.idx);
    heights.push_back(p.rows());
    at += p.rows();
  }
  Var out = t.emit(std::move(v));
  int oi = out.idx;
  t.node(oi).back = [&t, oi, idxs, heights] {
    Eigen::Index at2 = 0;
    for (std::size_t k = 0; k < idxs.size(); ++k) {
      t.grad(idxs[k]) += t.grad(oi).middleRows(at2, heights[k]);
      at2 += heights[k];
    }
  };
  return out;
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index n) {
  Tape& t = tape_of(a);
  require(start >= 0 && start + n <= a.cols(), "slice_cols out of range");
  Var out = t.emit(a.value().middleCols(start, n));
  int oi = out.idx, ai = a.idx;
  t.node(oi).back = [&t, oi, ai, start, n] {
    t.grad(ai).middleCols(start, n) += t.grad(oi);
  };
  return out;
}

Var rows_gather(Var a, const std::vector<int>& indices) {
  Tape& t = tape_of(a);
  Eigen::MatrixXd v(static_cast<Eigen::Index>(indices.size()), a.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    require(indices[i] >= 0 && indices[i] < a.rows(), "rows_gather index out of range");
    v.row(static_cast<Eigen::Index>(i)) = a.value().row(indices[i]);
  }
  Var out = t.emit(std::move(v));
  int oi = out.idx, ai = a.idx;
  t.node(oi).back = [&t, oi, ai, indices] {
    for (std::size_t i = 0; i < indices.size(); ++i)
      t.grad(ai).row(indices[i]) += t.grad(oi).row(static_cast<Eigen::Index>(i));
  };
  return out;
}

Var l2normalize_rows(Var a, double eps) {
  Tape& t = tape_of(a);
  const Eigen::MatrixXd& x = a.value();
  Eigen::VectorXd inv_norm(x.rows());
  Eigen::MatrixXd y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double n = std::sqrt(x.row(r).squaredNorm() + eps);
    inv_norm[r] = 1.0 / n;
    y.row(r) = x.row(r) * inv_norm[r];
  }
  Var out = t.emit(std::move(y));
  int oi = out.idx, ai = a.idx;
  t.node(oi).back = [&t, oi, ai, inv_norm] {
    const Eigen::MatrixXd& yv = t.node(oi).value;
    const Eigen::MatrixXd& g = t.grad(oi);
    for (Eigen::Index r = 0; r < yv.rows(); ++r) {
      double dot = g.row(r).cwiseProduct(yv.row(r)).sum();
      t.grad(ai).row(r) += inv_norm[r] * (g.row(r) - dot * yv.row(r));
    }
  };
  return out;
}

Var cross_entropy_rows(Var logits, const std::vector<int>& labels) {
  Tape& t = tape_of(logits);
  require(static_cast<Eigen::Index>(labels.size()) == logits.rows(),
          "one label per logits row required");
  const Eigen::MatrixXd& z = logits.value();
  Eigen::MatrixXd probs(z.rows(), z.cols());
  double loss = 0.0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    require(labels[static_cast<std::size_t>(r)] >= 0 &&
                labels[static_cast<std::size_t>(r)] < z.cols(),
            "label out of range");
    Eigen::ArrayXd row = z.row(r).array();
    double mx = row.maxCoeff();
    Eigen::ArrayXd e = (row - mx).exp();
    double denom = e.sum();
    probs.row(r) = (e / denom).matrix();
    loss += std::log(denom) + mx - z(r, labels[static_cast<std::size_t>(r)]);
  }
  loss /= static_cast<double>(z.rows());
  Eigen::MatrixXd v(1, 1);
  v(0, 0) = loss;
  Var out = t.emit(std::move(v));
  int oi = out.idx, li = logits.idx;
  t.node(oi).back = [&t, oi, li, probs, labels] {
    double g = t.grad(oi)(0, 0) / static_cast<double>(probs.rows());
    Eigen::MatrixXd d = probs;
    for (Eigen::Index r = 0; r < d.rows(); ++r)
      d(r, labels[static_cast<std::size_t>(r)]) -= 1.0;
    t.grad(li) += g * d;
  };
  return out;
}

// --- ParamStore --------------------------------------------------------------

Eigen::MatrixXd& ParamStore::declare(const std::string& name, Eigen::Index rows,
                                     Eigen::Index cols) {
  require(values_.count(name) == 0, "parameter already declared: " + name);
  values_[name] = Eigen::MatrixXd::Zero(rows, cols);
  grads_[name] = Eigen::MatrixXd::Zero(rows, cols);
  return values_[name];
}

Eigen::MatrixXd& ParamStore::value(const std::string& name) {
  auto it = values_.find(name);
  require(it != values_.end(), "unknown parameter: " + name);
  return it->second;
}

const Eigen::MatrixXd& ParamStore::value(const std::string& name) const {
  auto it = values_.find(name);
  require(it != values_.end(), "unknown parameter: " + name);
  return it->second;
}

Eigen::MatrixXd& ParamStore::grad(const std::string& name) {
  auto it = grads_.find(name);
  require(it != grads_.end(), "unknown parameter: " + name);
  return it->second;
}

Var ParamStore::use(Tape& tape, const std::string& name) {
  return tape.param(value(name), grad(name));
}

void ParamStore::zero_grads() {
  for (auto& [name, g] : grads_) g.setZero();
}

void ParamStore::sgd_step(double lr) {
  for (auto& [name, v] : values_) v -= lr * grads_[name];
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, v] : values_) n += static_cast<std::size_t>(v.size());
  return n;
}

double ParamStore::get_scalar(std::size_t i) const {
  for (const auto& [name, v] : values_) {
    if (i < static_cast<std::size_t>(v.size())) return v.data()[i];
    i -= static_cast<std::size_t>(v.size());
  }
  fail("scalar index out of range");
}

void ParamStore::set_scalar(std::size_t i, double val) {
  for (auto& [name, v] : values_) {
    if (i < static_cast<std::size_t>(v.size())) {
      v.data()[i] = val;
      return;
    }
    i -= static_cast<std::size_t>(v.size());
  }
  fail("scalar index out of range");
}

double ParamStore::grad_scalar(std::size_t i) const {
  for (const auto& [name, g] : grads_) {
    if (i < static_cast<std::size_t>(g.size())) return g.data()[i];
    i -= static_cast<std::size_t>(g.size());
  }
  fail("scalar index out of range");
}

void init_gaussian(Eigen::MatrixXd& m, std::mt19937_64& rng, double sigma) {
  std::normal_distribution<double> dist(0.0, sigma);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = dist(rng);
}

}  // namespace mobintent::ad
