#pragma once

#include <Eigen/Core>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mobintent/common.hpp"

namespace mobintent::ad {

class Tape;

/// Handle to a matrix-valued node on a tape.
struct Var {
  int idx = -1;
  Tape* tape = nullptr;

  const Eigen::MatrixXd& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

/// Reverse-mode tape over Eigen matrices. One tape per forward pass; backward()
/// runs the recorded closures in reverse and accumulates parameter gradients
/// into their external buffers.
class Tape {
 public:
  struct Node {
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;
    std::function<void()> back;
    Eigen::MatrixXd* external_grad = nullptr;
  };

  Var constant(Eigen::MatrixXd v);
  Var param(const Eigen::MatrixXd& value, Eigen::MatrixXd& grad);

  void backward(Var loss);

  Node& node(int idx) { return nodes_[static_cast<std::size_t>(idx)]; }
  const Node& node(int idx) const { return nodes_[static_cast<std::size_t>(idx)]; }
  Eigen::MatrixXd& grad(int idx) { return nodes_[static_cast<std::size_t>(idx)].grad; }

  Var emit(Eigen::MatrixXd value, std::function<void()> back = nullptr);

 private:
  std::vector<Node> nodes_;
};

// --- ops -------------------------------------------------------------------

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var cmul(Var a, Var b);
Var scale(Var a, double s);
Var transpose(Var a);
Var relu(Var a);
Var tanh_op(Var a);
Var sigmoid(Var a);
Var softmax_rows(Var a);
Var layernorm_rows(Var x, Var gamma, Var beta, double eps = 1e-5);
Var mean_rows(Var a);                            // (R,C) -> (1,C)
Var sum_all(Var a);                              // -> (1,1)
Var add_rowvec(Var a, Var bias);                 // broadcast (1,C) over rows
Var concat_cols(const std::vector<Var>& parts);  // horizontal
Var concat_rows(const std::vector<Var>& parts);  // vertical
Var slice_cols(Var a, Eigen::Index start, Eigen::Index n);
Var rows_gather(Var a, const std::vector<int>& indices);
Var l2normalize_rows(Var a, double eps = 1e-12);
/// Mean cross-entropy of row-wise logits against integer labels.
Var cross_entropy_rows(Var logits, const std::vector<int>& labels);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return matmul(a, b); }

// --- parameter store ---------------------------------------------------------

/// Named trainable matrices with paired gradient buffers. Iteration order is
/// the lexicographic name order, so flattening is stable across runs.
class ParamStore {
 public:
  Eigen::MatrixXd& declare(const std::string& name, Eigen::Index rows, Eigen::Index cols);
  Eigen::MatrixXd& value(const std::string& name);
  const Eigen::MatrixXd& value(const std::string& name) const;
  Eigen::MatrixXd& grad(const std::string& name);
  bool has(const std::string& name) const { return values_.count(name) > 0; }

  Var use(Tape& tape, const std::string& name);

  void zero_grads();
  void sgd_step(double lr);

  std::size_t scalar_count() const;
  double get_scalar(std::size_t i) const;
  void set_scalar(std::size_t i, double v);
  double grad_scalar(std::size_t i) const;

  const std::map<std::string, Eigen::MatrixXd>& values() const { return values_; }
  std::map<std::string, Eigen::MatrixXd>& mutable_values() { return values_; }

 private:
  std::map<std::string, Eigen::MatrixXd> values_;
  std::map<std::string, Eigen::MatrixXd> grads_;
};

/// Seeded Gaussian init, sigma scaled like 1/sqrt(fan_in).
void init_gaussian(Eigen::MatrixXd& m, std::mt19937_64& rng, double sigma);

}  // namespace mobintent::ad
