#pragma once

#include <Eigen/Dense>

#include <variant>

namespace kpe {

/// Label of a finite action set. Binary problems use {0, 1}.
struct DiscreteAction {
  int label = 0;
  friend bool operator==(const DiscreteAction&, const DiscreteAction&) = default;
};

/// Either a discrete label or a point in the continuous action cube.
using Action = std::variant<DiscreteAction, Eigen::VectorXd>;

/// A state-action pair u = (s, a).
struct Point {
  Eigen::VectorXd state;
  Action action;

  static Point binary(double s, int a) {
    return Point{Eigen::VectorXd::Constant(1, s), DiscreteAction{a}};
  }
  static Point continuous(Eigen::VectorXd s, Eigen::VectorXd a) {
    return Point{std::move(s), Action{std::move(a)}};
  }

  bool has_discrete_action() const { return std::holds_alternative<DiscreteAction>(action); }
  int label() const { return std::get<DiscreteAction>(action).label; }
  const Eigen::VectorXd& action_vector() const { return std::get<Eigen::VectorXd>(action); }
};

inline bool same_action(const Action& a, const Action& b) {
  if (a.index() != b.index()) return false;
  if (const auto* da = std::get_if<DiscreteAction>(&a)) return *da == std::get<DiscreteAction>(b);
  const auto& va = std::get<Eigen::VectorXd>(a);
  const auto& vb = std::get<Eigen::VectorXd>(b);
  return va.size() == vb.size() && (va.array() == vb.array()).all();
}

}  // namespace kpe
