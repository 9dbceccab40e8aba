#pragma once

#include <vector>

#include "mcinv/dictionary.hpp"
#include "mcinv/nnls.hpp"
#include "mcinv/types.hpp"

namespace mcinv {

// Exact solver of the one-fingerprint-per-block decomposition: enumerates
// every atom index tuple, solves the K-variable NNLS sub-problem for each,
// and keeps the global minimizer.

struct FingerprintFit {
  std::vector<Index> atom_indices;      // within-block index per block
  Vector weights;                       // optimal w per selected atom
  Vector fractions;                     // normalized weights, sum 1
  std::vector<AtomParams> params;       // (r, f) of the selected atoms
  std::vector<Vector3> orientations;    // block orientations
  double residual_norm = 0.0;
  Index combos_evaluated = 0;
  bool degenerate = false;              // all weights were zero
};

// nu_k = w_k / sum(w); a zero weight vector falls back to uniform 1/K and
// sets the degenerate flag.
Vector weights_to_fractions(const Vector& weights, bool* degenerate = nullptr);

// Global minimizer over all prod N_k index tuples. Ties on the objective
// keep the lexicographically smallest tuple; the parallel reduction
// preserves that order, so the result is independent of thread count.
FingerprintFit fit_exhaustive(const Vector& y, const Dictionary& dict,
                              const NnlsOptions& opts = {}, int threads = 1);

}  // namespace mcinv
