#include "defu/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace defu {
namespace {

std::vector<std::size_t> pick_coords(std::size_t numel, std::size_t limit,
                                     std::mt19937_64& rng) {
  std::vector<std::size_t> idx(numel);
  std::iota(idx.begin(), idx.end(), 0);
  if (limit == 0 || limit >= numel) return idx;
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

void record(GradCheckResult& r, const std::string& tensor, std::size_t index,
            double analytic, double numeric) {
  const double denom =
      std::max({1.0, std::abs(analytic), std::abs(numeric)});
  const double err = std::abs(analytic - numeric) / denom;
  ++r.coords_checked;
  if (err > r.max_rel_error || r.coords_checked == 1) {
    r.max_rel_error = std::max(r.max_rel_error, err);
    r.worst_tensor = tensor;
    r.worst_index = index;
    r.worst_analytic = analytic;
    r.worst_numeric = numeric;
  }
}

}  // namespace

template <typename T>
GradCheckResult grad_check(const TapeFunction<T>& f,
                           const std::vector<BasicTensor<T>>& inputs,
                           const GradCheckOptions& options) {
  auto evaluate = [&](const std::vector<BasicTensor<T>>& values) {
    ad::Tape<T> tape(false);
    std::vector<ad::Var<T>> vars;
    for (std::size_t i = 0; i < values.size(); ++i) {
      vars.push_back(tape.leaf(values[i], "input" + std::to_string(i)));
    }
    return static_cast<double>(f(tape, vars).value().item());
  };

  ad::GradMap<T> grads;
  {
    ad::Tape<T> tape;
    for (const auto& [kind, factor] : options.faults) {
      tape.inject_fault(kind, static_cast<T>(factor));
    }
    std::vector<ad::Var<T>> vars;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      vars.push_back(tape.leaf(inputs[i], "input" + std::to_string(i)));
    }
    grads = tape.backward(f(tape, vars));
  }

  GradCheckResult result;
  std::mt19937_64 rng(options.seed);
  std::vector<BasicTensor<T>> probe = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const std::string name = "input" + std::to_string(i);
    const BasicTensor<T>& analytic = grads.at(name);
    for (std::size_t j :
         pick_coords(inputs[i].numel(), options.max_coords_per_tensor, rng)) {
      const T original = probe[i][j];
      const T hi = original + static_cast<T>(options.eps);
      const T lo = original - static_cast<T>(options.eps);
      probe[i][j] = hi;
      const double up = evaluate(probe);
      probe[i][j] = lo;
      const double down = evaluate(probe);
      probe[i][j] = original;
      record(result, name, j, analytic[j],
             (up - down) / (static_cast<double>(hi) - lo));
    }
  }
  return result;
}

GradCheckResult grad_check_reference(
    const std::function<double()>& evaluate,
    std::span<ad::Parameter<double>* const> params,
    const AnalyticLookup& analytic, const GradCheckOptions& options) {
  GradCheckResult result;
  std::mt19937_64 rng(options.seed);
  for (ad::Parameter<double>* p : params) {
    for (std::size_t j :
         pick_coords(p->value.numel(), options.max_coords_per_tensor, rng)) {
      const double original = p->value[j];
      p->value[j] = original + options.eps;
      const double up = evaluate();
      p->value[j] = original - options.eps;
      const double down = evaluate();
      p->value[j] = original;
      record(result, p->name, j, analytic(p->name, j),
             (up - down) / (2 * options.eps));
    }
  }
  return result;
}

template <typename T>
GradCheckResult grad_check_parameters(
    const std::function<ad::Var<T>(ad::Tape<T>&)>& loss,
    std::span<ad::Parameter<T>* const> params,
    const GradCheckOptions& options) {
  auto evaluate = [&]() {
    ad::Tape<T> tape(false);
    return static_cast<double>(loss(tape).value().item());
  };

  ad::GradMap<T> grads;
  {
    ad::Tape<T> tape;
    for (const auto& [kind, factor] : options.faults) {
      tape.inject_fault(kind, static_cast<T>(factor));
    }
    grads = tape.backward(loss(tape));
  }
  for (ad::Parameter<T>* p : params) {
    if (!grads.count(p->name)) {
      throw ContractError("parameter '" + p->name + "' is not on the tape");
    }
  }

  GradCheckResult result;
  std::mt19937_64 rng(options.seed);
  for (ad::Parameter<T>* p : params) {
    const BasicTensor<T>& analytic = grads.at(p->name);
    for (std::size_t j :
         pick_coords(p->value.numel(), options.max_coords_per_tensor, rng)) {
      const T original = p->value[j];
      const T hi = original + static_cast<T>(options.eps);
      const T lo = original - static_cast<T>(options.eps);
      p->value[j] = hi;
      const double up = evaluate();
      p->value[j] = lo;
      const double down = evaluate();
      p->value[j] = original;
      record(result, p->name, j, analytic[j],
             (up - down) / (static_cast<double>(hi) - lo));
    }
  }
  return result;
}

template GradCheckResult grad_check<float>(const TapeFunction<float>&,
                                           const std::vector<Tensor>&,
                                           const GradCheckOptions&);
template GradCheckResult grad_check<double>(const TapeFunction<double>&,
                                            const std::vector<Tensor64>&,
                                            const GradCheckOptions&);
template GradCheckResult grad_check_parameters<float>(
    const std::function<ad::Var<float>(ad::Tape<float>&)>&,
    std::span<ad::Parameter<float>* const>, const GradCheckOptions&);
template GradCheckResult grad_check_parameters<double>(
    const std::function<ad::Var<double>(ad::Tape<double>&)>&,
    std::span<ad::Parameter<double>* const>, const GradCheckOptions&);

}  // namespace defu
