#include "ssmoe/denoiser/space_moe.hpp"

#include <numeric>
#include <stdexcept>
#include <string>

namespace ssmoe::denoiser {

Ffn::Ffn(std::int64_t d, std::int64_t hidden, Rng& rng, FfnActivation act)
    : fc1(d, hidden, rng), fc2(hidden, d, rng), act_(act) {
  register_module("fc1", fc1);
  register_module("fc2", fc2);
}

Tensor Ffn::forward(const Tensor& x) const {
  Tensor h = fc1.forward(x);
  if (act_ == FfnActivation::gelu) h = gelu(h);
  return fc2.forward(h);
}

SpaceMoeLayer::SpaceMoeLayer(std::int64_t d, std::int64_t hidden, int num_experts, double gamma, Rng& rng,
                             FfnActivation act)
    : d_(d), hidden_(hidden), gamma_(gamma), norm_(d) {
  if (num_experts < 1) throw std::invalid_argument("space moe: need at least one expert");
  if (gamma < 0.0 || gamma > 1.0) throw std::invalid_argument("space moe: gamma outside [0, 1]");
  register_module("norm", norm_);
  for (int i = 0; i < num_experts; ++i) {
    experts_.push_back(std::make_unique<Ffn>(d, hidden, rng, act));
    register_module("experts." + std::to_string(i), *experts_.back());
  }
}

std::vector<std::vector<int>> SpaceMoeLayer::random_assignment(std::int64_t batch, std::int64_t length,
                                                               int num_experts, Rng& rng) {
  const std::int64_t group = (length + num_experts - 1) / num_experts;
  std::vector<std::vector<int>> out(static_cast<std::size_t>(batch), std::vector<int>(static_cast<std::size_t>(length)));
  std::vector<std::int64_t> perm(static_cast<std::size_t>(length));
  for (auto& row : out) {
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(std::span<std::int64_t>(perm));
    for (std::int64_t k = 0; k < length; ++k) {
      row[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])] = static_cast<int>(k / group);
    }
  }
  return out;
}

Tensor SpaceMoeLayer::forward(const Tensor& tokens, Rng* rng) const {
  if (tokens.ndim() != 3 || tokens.dim(2) != d_) {
    throw TensorError("space_moe: expected [B, L, " + std::to_string(d_) + "] tokens, got " + shape_str(tokens.shape()));
  }
  if (merged_ || experts_.size() == 1) return add(tokens, experts_[0]->forward(norm_.forward(tokens)));
  if (rng == nullptr) throw std::invalid_argument("space_moe: training-mode forward needs an rng");
  return forward_assigned(tokens, random_assignment(tokens.dim(0), tokens.dim(1), num_experts(), *rng));
}

Tensor SpaceMoeLayer::forward_assigned(const Tensor& tokens, const std::vector<std::vector<int>>& assignment) const {
  const std::int64_t b = tokens.dim(0), l = tokens.dim(1);
  const int n = num_experts();
  const std::int64_t group = (l + n - 1) / n;
  if (static_cast<std::int64_t>(assignment.size()) != b) throw std::invalid_argument("space_moe: assignment batch mismatch");

  // Each expert sees `group` rows per sample; missing slots point at an
  // appended zero row whose outputs are discarded.
  const std::int64_t rows = b * l;
  std::vector<std::vector<std::int64_t>> index(static_cast<std::size_t>(n));
  for (std::int64_t s = 0; s < b; ++s) {
    const auto& row = assignment[static_cast<std::size_t>(s)];
    if (static_cast<std::int64_t>(row.size()) != l) throw std::invalid_argument("space_moe: assignment length mismatch");
    std::vector<std::int64_t> filled(static_cast<std::size_t>(n), 0);
    for (std::int64_t k = 0; k < l; ++k) {
      const int e = row[static_cast<std::size_t>(k)];
      if (e < 0 || e >= n) throw std::invalid_argument("space_moe: expert index out of range");
      index[static_cast<std::size_t>(e)].push_back(s * l + k);
      ++filled[static_cast<std::size_t>(e)];
    }
    for (int e = 0; e < n; ++e) {
      if (filled[static_cast<std::size_t>(e)] > group) throw std::invalid_argument("space_moe: unequal groups");
      for (auto k = filled[static_cast<std::size_t>(e)]; k < group; ++k) index[static_cast<std::size_t>(e)].push_back(rows);
    }
  }

  Tensor normed = reshape(norm_.forward(tokens), {rows, d_});
  Tensor padded = concat({normed, Tensor::zeros({1, d_}, tokens.dtype())}, 0);
  Tensor out;
  for (int e = 0; e < n; ++e) {
    const auto& idx = index[static_cast<std::size_t>(e)];
    Tensor y = experts_[static_cast<std::size_t>(e)]->forward(gather_rows(padded, idx));
    Tensor placed = scatter_rows(y, idx, rows + 1);
    out = out.defined() ? add(out, placed) : placed;
  }
  return add(tokens, reshape(narrow(out, 0, 0, rows), tokens.shape()));
}

void SpaceMoeLayer::momentum_share() {
  const int n = num_experts();
  if (merged_ || n < 2) return;
  std::vector<std::vector<std::pair<std::string, Tensor*>>> params;
  for (const auto& e : experts_) params.push_back(e->named_parameters());
  for (std::size_t k = 0; k < params[0].size(); ++k) {
    const auto size = static_cast<std::size_t>(params[0][k].second->numel());
    std::vector<double> total(size, 0.0);
    std::vector<std::vector<double>> old(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      old[static_cast<std::size_t>(i)] = params[static_cast<std::size_t>(i)][k].second->to_vector();
      for (std::size_t j = 0; j < size; ++j) total[j] += old[static_cast<std::size_t>(i)][j];
    }
    for (int i = 0; i < n; ++i) {
      Tensor* p = params[static_cast<std::size_t>(i)][k].second;
      const auto& w = old[static_cast<std::size_t>(i)];
      dispatch(p->dtype(), [&]<class T>(T) {
        auto d = p->mutable_data<T>();
        for (std::size_t j = 0; j < size; ++j) {
          const double others = (total[j] - w[j]) / (n - 1);
          d[j] = static_cast<T>(gamma_ * w[j] + (1.0 - gamma_) * others);
        }
      });
    }
  }
}

void SpaceMoeLayer::merge() {
  if (merged_) return;
  const int n = num_experts();
  auto first = experts_[0]->named_parameters();
  for (std::size_t k = 0; k < first.size(); ++k) {
    const auto size = static_cast<std::size_t>(first[k].second->numel());
    std::vector<double> total(size, 0.0);
    for (int i = 0; i < n; ++i) {
      auto v = experts_[static_cast<std::size_t>(i)]->named_parameters()[k].second->to_vector();
      for (std::size_t j = 0; j < size; ++j) total[j] += v[j];
    }
    for (auto& t : total) t /= n;
    first[k].second->copy_from(Tensor::from_values(first[k].second->shape(), total, first[k].second->dtype()));
  }
  for (int i = 1; i < n; ++i) unregister_module("experts." + std::to_string(i));
  experts_.resize(1);
  merged_ = true;
}

}  // namespace ssmoe::denoiser
