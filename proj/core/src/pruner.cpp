#include "rest/pruner.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <tuple>

#include "rest/error.hpp"

namespace rest {
namespace {

std::size_t consumer_of(const NetworkSpec& spec, std::size_t from) {
  for (std::size_t i = from + 1; i < spec.layers.size(); ++i) {
    const LayerKind k = spec.layers[i].kind;
    if (k == LayerKind::kReLU || k == LayerKind::kFlatten) continue;
    if (k == LayerKind::kConv1d || k == LayerKind::kLinear) return i;
    break;
  }
  return spec.layers.size();
}

std::vector<std::size_t> kept_indices(const std::vector<bool>& keep) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (keep[i]) idx.push_back(i);
  }
  return idx;
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

Tensor select(const Tensor& t, const std::vector<std::size_t>& idx) {
  if (!t.defined()) return t;
  std::vector<double> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(t[i]);
  return Tensor({idx.size()}, std::move(out));
}

double ratio(double before, double after) { return after > 0.0 ? before / after : 0.0; }

}  // namespace

std::size_t min_kept_filters(std::size_t filters) { return std::max<std::size_t>(1, (filters + 9) / 10); }

std::size_t PruneMask::kept_in(std::size_t unit) const {
  const auto& k = keep.at(unit);
  return static_cast<std::size_t>(std::count(k.begin(), k.end(), true));
}

PruneMask keep_all(const Network& net) {
  PruneMask mask;
  for (const PrunableUnit& u : net.spec().prunable) {
    const std::size_t n = net.spec().layers[u.layer].out_channels;
    mask.keep.emplace_back(n, true);
    mask.total += n;
  }
  return mask;
}

PruneMask rank_and_mask(const Network& net, double sparsity) {
  if (!(sparsity >= 0.0 && sparsity < 1.0)) {
    throw ConfigError("sparsity must be in [0, 1), got " + std::to_string(sparsity));
  }
  PruneMask mask = keep_all(net);
  mask.target = sparsity;
  const auto& units = net.spec().prunable;

  struct Candidate {
    double magnitude;
    std::size_t unit;
    std::size_t filter;
  };
  std::vector<Candidate> order;
  order.reserve(mask.total);
  for (std::size_t u = 0; u < units.size(); ++u) {
    const Tensor& gamma = net.layer(units[u].norm).gamma;
    for (std::size_t i = 0; i < gamma.numel(); ++i) order.push_back({std::abs(gamma[i]), u, i});
  }
  // Units are in layer order, so (unit, filter) is the (layer, filter) tie-break.
  std::sort(order.begin(), order.end(), [](const Candidate& a, const Candidate& b) {
    return std::tie(a.magnitude, a.unit, a.filter) < std::tie(b.magnitude, b.unit, b.filter);
  });

  // Smallest count m with m / total >= sparsity, robust to rounding in s * N.
  const std::size_t n = mask.total;
  std::size_t goal = static_cast<std::size_t>(std::ceil(sparsity * static_cast<double>(n)));
  while (goal > 0 && static_cast<double>(goal - 1) / static_cast<double>(n) >= sparsity) --goal;
  while (goal < n && static_cast<double>(goal) / static_cast<double>(n) < sparsity) ++goal;

  std::vector<std::size_t> kept(units.size());
  for (std::size_t u = 0; u < units.size(); ++u) kept[u] = mask.keep[u].size();
  for (const Candidate& c : order) {
    if (mask.pruned >= goal) break;
    if (kept[c.unit] <= min_kept_filters(mask.keep[c.unit].size())) continue;
    mask.keep[c.unit][c.filter] = false;
    --kept[c.unit];
    ++mask.pruned;
  }
  return mask;
}

void check_mask(const Network& net, const PruneMask& mask) {
  const auto& units = net.spec().prunable;
  if (mask.keep.size() != units.size()) {
    throw ConfigError("prune mask has " + std::to_string(mask.keep.size()) + " units, network has " +
                      std::to_string(units.size()));
  }
  for (std::size_t u = 0; u < units.size(); ++u) {
    const std::size_t n = net.spec().layers[units[u].layer].out_channels;
    if (mask.keep[u].size() != n) {
      throw ConfigError("prune mask unit " + std::to_string(u) + " covers " +
                        std::to_string(mask.keep[u].size()) + " filters, layer has " + std::to_string(n));
    }
    if (mask.kept_in(u) < min_kept_filters(n)) {
      throw ConfigError("prune mask unit " + std::to_string(u) + " keeps fewer than " +
                        std::to_string(min_kept_filters(n)) + " filters");
    }
  }
}

Network compact(const Network& net, const PruneMask& mask) {
  check_mask(net, mask);
  const NetworkSpec& old_spec = net.spec();
  const auto shapes = old_spec.infer_shapes();
  const std::size_t n_layers = old_spec.layers.size();

  // Surviving output rows and input features for every layer.
  std::vector<std::vector<std::size_t>> out_keep(n_layers), in_keep(n_layers);
  for (std::size_t i = 0; i < n_layers; ++i) {
    const LayerSpec& l = old_spec.layers[i];
    out_keep[i] = iota(l.out_channels);
    in_keep[i] = iota(l.in_channels);
  }
  for (std::size_t u = 0; u < old_spec.prunable.size(); ++u) {
    const PrunableUnit& unit = old_spec.prunable[u];
    const auto channels = kept_indices(mask.keep[u]);
    out_keep[unit.layer] = channels;
    out_keep[unit.norm] = channels;
    in_keep[unit.norm] = channels;
    const std::size_t next = consumer_of(old_spec, unit.norm);
    if (old_spec.layers[next].kind == LayerKind::kConv1d) {
      in_keep[next] = channels;
    } else {
      // Linear consumer: channel c owns the flattened columns [c*L, (c+1)*L).
      const Shape& s = shapes[unit.norm];
      const std::size_t len = s.size() == 2 ? s[1] : 1;
      std::vector<std::size_t> cols;
      for (std::size_t c : channels) {
        for (std::size_t t = 0; t < len; ++t) cols.push_back(c * len + t);
      }
      in_keep[next] = std::move(cols);
    }
  }

  NetworkSpec spec = old_spec;
  std::vector<LayerParams> params(n_layers);
  for (std::size_t i = 0; i < n_layers; ++i) {
    LayerSpec& l = spec.layers[i];
    const LayerParams& src = net.layer(i);
    LayerParams& dst = params[i];
    const auto& rows = out_keep[i];
    const auto& cols = in_keep[i];
    switch (l.kind) {
      case LayerKind::kConv1d: {
        const std::size_t k_in = old_spec.layers[i].in_channels;
        const std::size_t k_l = l.kernel;
        std::vector<double> w;
        w.reserve(rows.size() * cols.size() * k_l);
        for (std::size_t o : rows) {
          for (std::size_t c : cols) {
            for (std::size_t t = 0; t < k_l; ++t) w.push_back(src.weight[(o * k_in + c) * k_l + t]);
          }
        }
        l.out_channels = rows.size();
        l.in_channels = cols.size();
        dst.weight = Tensor({rows.size(), cols.size(), k_l}, std::move(w));
        dst.bias = select(src.bias, rows);
        break;
      }
      case LayerKind::kLinear: {
        const std::size_t k_in = old_spec.layers[i].in_channels;
        std::vector<double> w;
        w.reserve(rows.size() * cols.size());
        for (std::size_t o : rows) {
          for (std::size_t c : cols) w.push_back(src.weight[o * k_in + c]);
        }
        l.out_channels = rows.size();
        l.in_channels = cols.size();
        dst.weight = Tensor({rows.size(), cols.size()}, std::move(w));
        dst.bias = select(src.bias, rows);
        break;
      }
      case LayerKind::kBatchNorm1d:
        l.in_channels = l.out_channels = rows.size();
        dst.gamma = select(src.gamma, rows);
        dst.beta = select(src.beta, rows);
        dst.running_mean = select(src.running_mean, rows);
        dst.running_var = select(src.running_var, rows);
        break;
      default:
        break;
    }
    for (Tensor* t : {&dst.weight, &dst.bias, &dst.gamma, &dst.beta}) {
      if (t->defined()) t->set_requires_grad(true);
    }
  }
  return Network(std::move(spec), std::move(params));
}

double SparsityReport::param_ratio() const {
  return ratio(static_cast<double>(params_before), static_cast<double>(params_after));
}
double SparsityReport::flop_ratio() const {
  return ratio(static_cast<double>(flops_before), static_cast<double>(flops_after));
}
double SparsityReport::pruned_fraction() const {
  return filters_before ? 1.0 - static_cast<double>(filters_after) / static_cast<double>(filters_before)
                        : 0.0;
}

SparsityReport sparsity_report(const Network& before, const Network& after) {
  const NetworkSpec& a = before.spec();
  const NetworkSpec& b = after.spec();
  if (a.layers.size() != b.layers.size() || a.prunable != b.prunable) {
    throw ConfigError("sparsity report: networks do not share a layer structure");
  }
  const ParamCount pa = count_params(a), pb = count_params(b);
  const FlopCount fa = count_flops(a), fb = count_flops(b);
  SparsityReport r;
  r.params_before = pa.total;
  r.params_after = pb.total;
  r.flops_before = fa.total;
  r.flops_after = fb.total;
  for (const PrunableUnit& u : a.prunable) {
    UnitReport ur;
    ur.layer = u.layer;
    ur.filters_before = a.layers[u.layer].out_channels;
    ur.filters_after = b.layers[u.layer].out_channels;
    for (std::size_t i : {u.layer, u.norm}) {
      ur.params_before += pa.per_layer[i].learnable;
      ur.params_after += pb.per_layer[i].learnable;
      ur.flops_before += fa.per_layer[i];
      ur.flops_after += fb.per_layer[i];
    }
    r.filters_before += ur.filters_before;
    r.filters_after += ur.filters_after;
    r.units.push_back(ur);
  }
  return r;
}

void write_sparsity_csv(const SparsityReport& r, std::ostream& out) {
  out << "scope,layer,filters_before,filters_after,kept_fraction,params_before,params_after,"
         "param_ratio,flops_before,flops_after,flop_ratio\n";
  auto row = [&](const std::string& scope, const std::string& layer, std::size_t fb, std::size_t fa,
                 std::size_t pb, std::size_t pa, std::uint64_t xb, std::uint64_t xa) {
    out << scope << ',' << layer << ',' << fb << ',' << fa << ','
        << ratio(static_cast<double>(fa), static_cast<double>(fb)) << ',' << pb << ',' << pa << ','
        << ratio(static_cast<double>(pb), static_cast<double>(pa)) << ',' << xb << ',' << xa << ','
        << ratio(static_cast<double>(xb), static_cast<double>(xa)) << '\n';
  };
  for (std::size_t u = 0; u < r.units.size(); ++u) {
    const UnitReport& x = r.units[u];
    row("unit" + std::to_string(u), std::to_string(x.layer), x.filters_before, x.filters_after,
        x.params_before, x.params_after, x.flops_before, x.flops_after);
  }
  row("total", "", r.filters_before, r.filters_after, r.params_before, r.params_after, r.flops_before,
      r.flops_after);
}

}  // namespace rest
