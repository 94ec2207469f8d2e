#pragma once

#include <iosfwd>
#include <vector>

#include "rest/network.hpp"

namespace rest {

// Minimum number of filters a unit keeps: max(1, ceil(K_out / 10)).
std::size_t min_kept_filters(std::size_t filters);

struct PruneMask {
  // keep[u][i]: whether filter i of prunable unit u survives.
  std::vector<std::vector<bool>> keep;
  double target = 0.0;
  std::size_t total = 0;
  std::size_t pruned = 0;

  double achieved() const { return total ? static_cast<double>(pruned) / static_cast<double>(total) : 0.0; }
  std::size_t kept_in(std::size_t unit) const;
};

// Mask with every filter kept.
PruneMask keep_all(const Network& net);

// Globally ranks every filter of every prunable unit by |gamma| (ties: lower
// layer, then lower filter index first) and prunes from the smallest until
// pruned / total >= sparsity, skipping filters whose removal would leave a
// unit below min_kept_filters. Throws ConfigError unless 0 <= sparsity < 1.
PruneMask rank_and_mask(const Network& net, double sparsity);

// Throws ConfigError if the mask does not fit the network or breaks a floor.
void check_mask(const Network& net, const PruneMask& mask);

// Physically removes pruned filters: the unit's conv/linear rows, bias,
// batchnorm entries and the matching input slices of the next conv/linear
// (flattened column groups when a flatten sits in between).
Network compact(const Network& net, const PruneMask& mask);

struct UnitReport {
  std::size_t layer = 0;
  std::size_t filters_before = 0;
  std::size_t filters_after = 0;
  std::size_t params_before = 0;
  std::size_t params_after = 0;
  std::uint64_t flops_before = 0;
  std::uint64_t flops_after = 0;
};

struct SparsityReport {
  std::vector<UnitReport> units;
  std::size_t filters_before = 0;
  std::size_t filters_after = 0;
  std::size_t params_before = 0;
  std::size_t params_after = 0;
  std::uint64_t flops_before = 0;
  std::uint64_t flops_after = 0;

  double param_ratio() const;  // before / after
  double flop_ratio() const;
  double pruned_fraction() const;
};

// Compares a network with its compacted version (same layer structure).
SparsityReport sparsity_report(const Network& before, const Network& after);

// Columns: scope,layer,filters_before,filters_after,kept_fraction,
// params_before,params_after,param_ratio,flops_before,flops_after,flop_ratio
// One row per prunable unit, then a "total" row.
void write_sparsity_csv(const SparsityReport& report, std::ostream& out);

}  // namespace rest
