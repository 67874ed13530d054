#include "shwmpc/autodiff.hpp"

namespace shwmpc::ad {

Tape*& active_tape() {
  thread_local Tape* tape = nullptr;
  return tape;
}

void Tape::backward(int out, std::vector<double>& adjoint) const {
  adjoint.assign(nodes_.size(), 0.0);
  if (out < 0) return;
  adjoint[out] = 1.0;
  for (int i = out; i >= 0; --i) {
    const double g = adjoint[i];
    if (g == 0.0) continue;
    const Node& n = nodes_[i];
    if (n.a >= 0) adjoint[n.a] += g * n.da;
    if (n.b >= 0) adjoint[n.b] += g * n.db;
  }
}

std::vector<Var> TapeScope::leaves(std::span<const double> values) {
  std::vector<Var> out;
  out.reserve(values.size());
  for (double v : values) out.emplace_back(v, tape_.leaf());
  return out;
}

}  // namespace shwmpc::ad
