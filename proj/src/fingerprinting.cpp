#include "mcinv/fingerprinting.hpp"

#include <cmath>

#include "mcinv/parallel.hpp"

namespace mcinv {

Vector weights_to_fractions(const Vector& weights, bool* degenerate) {
  for (Index i = 0; i < weights.size(); ++i)
    require(weights[i] >= 0.0, "weights_to_fractions: weights must be >= 0");
  const double total = weights.sum();
  if (degenerate) *degenerate = total <= 0.0;
  if (total <= 0.0)
    return Vector::Constant(weights.size(),
                            1.0 / static_cast<double>(weights.size()));
  return weights / total;
}

namespace {

struct Candidate {
  double objective = 0.0;  // ||y - Aw||^2 - ||y||^2, lower is better
  std::vector<Index> tuple;
  Vector weights;
  bool valid = false;

  bool better_than(const Candidate& other) const {
    if (!other.valid) return valid;
    if (!valid) return false;
    if (objective != other.objective) return objective < other.objective;
    return tuple < other.tuple;
  }
};

}  // namespace

FingerprintFit fit_exhaustive(const Vector& y, const Dictionary& dict,
                              const NnlsOptions& opts, int threads) {
  require_dims(y.size() == dict.rows(),
               "fit_exhaustive: y length must equal dictionary rows");
  const Index k = dict.blocks();
  require(k >= 1 && k <= 4, "fit_exhaustive: supports 1 to 4 blocks");
  (void)opts;

  // Per-block precomputation: squared column norms, correlations with y,
  // and cross-block Gram matrices. Every sub-problem then reduces to a
  // K x K system assembled from scalars.
  std::vector<Vector> col_norms2(static_cast<std::size_t>(k));
  std::vector<Vector> rhs(static_cast<std::size_t>(k));
  std::vector<std::vector<Matrix>> cross(static_cast<std::size_t>(k));
  for (Index a = 0; a < k; ++a) {
    const Matrix& atoms_a = dict.subs[static_cast<std::size_t>(a)].atoms;
    col_norms2[static_cast<std::size_t>(a)] =
        atoms_a.colwise().squaredNorm().transpose();
    rhs[static_cast<std::size_t>(a)] = atoms_a.transpose() * y;
    cross[static_cast<std::size_t>(a)].resize(static_cast<std::size_t>(k));
    for (Index b = a + 1; b < k; ++b)
      cross[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] =
          atoms_a.transpose() * dict.subs[static_cast<std::size_t>(b)].atoms;
  }

  std::vector<Index> block_sizes(static_cast<std::size_t>(k));
  Index combos = 1;
  for (Index a = 0; a < k; ++a) {
    block_sizes[static_cast<std::size_t>(a)] =
        dict.subs[static_cast<std::size_t>(a)].cols();
    combos *= block_sizes[static_cast<std::size_t>(a)];
  }

  // Flat combo index -> tuple, most significant digit first, so ascending
  // flat order is ascending lexicographic order.
  auto unflatten = [&](Index flat, std::vector<Index>& tuple) {
    for (Index a = k - 1; a >= 0; --a) {
      const Index n = block_sizes[static_cast<std::size_t>(a)];
      tuple[static_cast<std::size_t>(a)] = flat % n;
      flat /= n;
    }
  };

  const int chunk_count = resolve_threads(threads);
  std::vector<Candidate> chunk_best(
      static_cast<std::size_t>(std::min<Index>(combos, chunk_count)));

  parallel_for_chunks(combos, chunk_count, [&](Index begin, Index end, int chunk) {
    Candidate best;
    std::vector<Index> tuple(static_cast<std::size_t>(k));
    double gram[4][4];
    double local_rhs[4];
    double w[4];
    unflatten(begin, tuple);
    for (Index flat = begin; flat < end; ++flat) {
      for (Index a = 0; a < k; ++a) {
        const Index ja = tuple[static_cast<std::size_t>(a)];
        gram[a][a] = col_norms2[static_cast<std::size_t>(a)][ja];
        local_rhs[a] = rhs[static_cast<std::size_t>(a)][ja];
        for (Index b = a + 1; b < k; ++b) {
          const double dot =
              cross[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)](
                  ja, tuple[static_cast<std::size_t>(b)]);
          gram[a][b] = dot;
          gram[b][a] = dot;
        }
      }
      const double objective =
          detail::micro_enumerate(gram, local_rhs, static_cast<int>(k), w);
      const bool improves =
          !best.valid || objective < best.objective ||
          (objective == best.objective && tuple < best.tuple);
      if (improves) {
        best.valid = true;
        best.objective = objective;
        best.tuple = tuple;
        best.weights.resize(k);
        for (Index a = 0; a < k; ++a) best.weights[a] = w[a];
      }

      // Odometer increment keeps the per-chunk scan lexicographic.
      for (Index a = k - 1; a >= 0; --a) {
        if (++tuple[static_cast<std::size_t>(a)] <
            block_sizes[static_cast<std::size_t>(a)])
          break;
        tuple[static_cast<std::size_t>(a)] = 0;
      }
    }
    chunk_best[static_cast<std::size_t>(chunk)] = std::move(best);
  });

  Candidate best;
  for (const auto& cand : chunk_best)
    if (cand.better_than(best)) best = cand;
  require(best.valid, "fit_exhaustive: empty dictionary");

  FingerprintFit fit;
  fit.atom_indices = best.tuple;
  fit.weights = best.weights;
  fit.combos_evaluated = combos;
  fit.fractions = weights_to_fractions(best.weights, &fit.degenerate);
  Vector reconstruction = Vector::Zero(y.size());
  for (Index a = 0; a < k; ++a) {
    const auto& sub = dict.subs[static_cast<std::size_t>(a)];
    const Index ja = best.tuple[static_cast<std::size_t>(a)];
    fit.params.push_back(sub.atom_params[static_cast<std::size_t>(ja)]);
    fit.orientations.push_back(sub.orientation);
    reconstruction += best.weights[a] * sub.atoms.col(ja);
  }
  fit.residual_norm = (y - reconstruction).norm();
  return fit;
}

}  // namespace mcinv
