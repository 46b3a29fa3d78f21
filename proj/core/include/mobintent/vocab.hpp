#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "mobintent/common.hpp"

namespace mobintent {

/// Language-model token embedding table. The default is a seeded synthetic
/// matrix; a real table can be loaded from the documented text format.
struct VocabularyMatrix {
  Eigen::MatrixXd v;  // N_V x D_V

  int n_vocab() const { return static_cast<int>(v.rows()); }
  int dim() const { return static_cast<int>(v.cols()); }
  std::string hash() const;
  void validate() const;  // finite, no all-zero rows

  /// Mean of the rows named by `token_ids` ("stay still" initialization).
  Eigen::VectorXd phrase_embedding(const std::vector<int>& token_ids) const;
};

VocabularyMatrix synth_vocabulary(int n_vocab, int dim, std::uint64_t seed);

/// Text format: one header line "N_V D_V", then row-major values.
void save_vocabulary(const VocabularyMatrix& vocab, const std::filesystem::path& path);
VocabularyMatrix load_vocabulary(const std::filesystem::path& path);

}  // namespace mobintent
