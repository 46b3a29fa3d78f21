#include "mobintent/vocab.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace mobintent {

std::string VocabularyMatrix::hash() const {
  std::ostringstream ss;
  ss.precision(17);
  ss << v.rows() << "x" << v.cols() << ";";
  for (Eigen::Index i = 0; i < v.rows(); ++i)
    for (Eigen::Index j = 0; j < v.cols(); ++j) ss << v(i, j) << ",";
  return content_hash(ss.str());
}

void VocabularyMatrix::validate() const {
  require(v.rows() >= 2 && v.cols() >= 1, "vocabulary must have at least 2 rows");
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    require(v.row(i).allFinite(), "vocabulary row " + std::to_string(i) + " is not finite");
    require(v.row(i).cwiseAbs().maxCoeff() > 0.0,
            "vocabulary row " + std::to_string(i) + " is all-zero");
  }
}

Eigen::VectorXd VocabularyMatrix::phrase_embedding(const std::vector<int>& token_ids) const {
  require(!token_ids.empty(), "phrase needs at least one token id");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(v.cols());
  for (int id : token_ids) {
    require(id >= 0 && id < v.rows(), "token id out of vocabulary range");
    sum += v.row(id).transpose();
  }
  return sum / static_cast<double>(token_ids.size());
}

VocabularyMatrix synth_vocabulary(int n_vocab, int dim, std::uint64_t seed) {
  require(n_vocab >= 2 && dim >= 1, "bad vocabulary shape");
  VocabularyMatrix vocab;
  vocab.v.resize(n_vocab, dim);
  auto rng = make_rng(derive_seed(seed, "vocab"));
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
  for (Eigen::Index i = 0; i < vocab.v.rows(); ++i)
    for (Eigen::Index j = 0; j < vocab.v.cols(); ++j) vocab.v(i, j) = dist(rng);
  vocab.validate();
  return vocab;
}

void save_vocabulary(const VocabularyMatrix& vocab, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  require(out.good(), "cannot write vocabulary file " + path.string());
  out.precision(17);
  out << vocab.v.rows() << " " << vocab.v.cols() << "\n";
  for (Eigen::Index i = 0; i < vocab.v.rows(); ++i) {
    for (Eigen::Index j = 0; j < vocab.v.cols(); ++j) {
      if (j) out << " ";
      out << vocab.v(i, j);
    }
    out << "\n";
  }
  require(out.good(), "write failed for " + path.string());
}

VocabularyMatrix load_vocabulary(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open vocabulary file " + path.string());
  Eigen::Index rows = 0, cols = 0;
  in >> rows >> cols;
  require(in.good() && rows >= 2 && cols >= 1, "vocabulary header must be 'N_V D_V'");
  VocabularyMatrix vocab;
  vocab.v.resize(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) {
      double x;
      require(static_cast<bool>(in >> x), "vocabulary file truncated at row " + std::to_string(i));
      vocab.v(i, j) = x;
    }
  vocab.validate();
  return vocab;
}

}  // namespace mobintent
