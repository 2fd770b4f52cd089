#pragma once

#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "blastlab/gridworld.hpp"

namespace blastlab {

/// Real-valued position pair: the unit the backdoored agent controls (b) and
/// the attacker's unit (e). Grid coordinates embed as reals.
struct PosPair {
  double bx = 0, by = 0, ex = 0, ey = 0;
};

enum class Feature : std::uint8_t { X = 0, Y = 1 };
enum class ArithOp : std::uint8_t { Add, Subtract, Multiply, Divide };
enum class Relator : std::uint8_t { Greater, GreaterEq, Less, LessEq, Equal, NotEqual };

/// One spatial constraint: feat(e) <op> feat(b) <relator> C, anchored
/// `offset` steps before the window end (offset 0 is the newest step).
struct SpatialConstraint {
  int offset = 0;
  Feature feature = Feature::X;
  ArithOp op = ArithOp::Subtract;
  Relator relator = Relator::Equal;
  double constant = 0.0;
};

/// Division by zero evaluates to unsatisfied; equality uses a 1e-9 tolerance
/// (exact on integer grids).
bool eval_atom(const SpatialConstraint& c, double bx, double by, double ex, double ey);

/// Formula tree over spatial constraints: atom | and | or | ite.
/// Immutable and freely shareable.
class Formula {
 public:
  enum class Kind : std::uint8_t { Atom, And, Or, Ite };
  using Ptr = std::shared_ptr<const Formula>;

  static Ptr atom(SpatialConstraint c);
  static Ptr conj(Ptr l, Ptr r);
  static Ptr disj(Ptr l, Ptr r);
  static Ptr ite(Ptr cond, Ptr then_f, Ptr else_f);

  Kind kind() const { return kind_; }
  const SpatialConstraint& constraint() const { return constraint_; }
  const Ptr& child(int i) const { return children_[static_cast<std::size_t>(i)]; }

  /// Largest atom offset appearing anywhere in the tree.
  int max_offset() const;

  /// Collects every atom in the tree (in-order).
  void collect_atoms(std::vector<SpatialConstraint>& out) const;

 private:
  Kind kind_ = Kind::Atom;
  SpatialConstraint constraint_;
  std::array<Ptr, 3> children_;
};

/// Boolean value of the formula over a chronological window of position
/// pairs (window.front() is the oldest step).
bool eval_formula(const Formula::Ptr& f, std::span<const PosPair> window);

/// The (Psi, zeta) pair with window length. zeta entries may be null, which
/// match any action.
struct TriggerSpec {
  Formula::Ptr formula;
  std::vector<std::optional<Action>> actions;  // length == window_len
  int window_len = 0;

  /// Throws ContractError when an atom offset falls outside the window or
  /// the action sequence length disagrees with the window length.
  void validate() const;

  /// Conjunction of the earliest-offset atoms; the latch test for the
  /// attacker controller.
  bool earliest_constraints_hold(double bx, double by, double ex, double ey) const;
};

/// All steps t where the window ending at t satisfies the formula and the
/// attacker actions over the window equal zeta (null entries match anything).
/// Trajectories shorter than the window yield no fires.
std::vector<int> scan(std::span<const PosPair> positions,
                      std::span<const std::optional<Action>> attacker_actions,
                      const TriggerSpec& spec);

// ---- serialization ("blastlab/trigger/1") ----------------------------------
// The formula serializes as nested arrays:
//   ["atom", offset, "x"|"y", "+"|"-"|"*"|"/", ">"|">="|"<"|"<="|"=="|"!=", C]
//   ["and"|"or", f, f]   ["ite", f, f, f]

std::string trigger_to_json(const TriggerSpec& spec);
TriggerSpec trigger_from_json(const std::string& text);
TriggerSpec load_trigger(const std::string& path);
void save_trigger(const std::string& path, const TriggerSpec& spec);

// ---- scripted attacker ------------------------------------------------------

/// Drives one evader through the action sequence. Latches the lowest-id
/// alive evader inside the backdoored agent's observation window whose
/// relative position satisfies the earliest spatial constraints, emits the
/// scripted actions, and evaluates the lived relative-position window at the
/// final step. Re-latches after broken attempts until the trigger fires;
/// after a fire no further overrides are issued until re-armed.
class AttackerController {
 public:
  AttackerController() = default;
  explicit AttackerController(TriggerSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
  }

  void arm();
  void disarm();
  bool armed() const { return armed_; }
  bool completed() const { return completed_; }
  std::optional<int> latched() const { return latched_; }

  struct StepPlan {
    std::map<int, Action> overrides;
    bool fire = false;
  };

  /// Called once per environment step, before actions execute, against the
  /// pre-step world. Updates `controlled` flags on the world.
  StepPlan step(GridWorld& world, int blast_agent);

  const TriggerSpec& spec() const { return spec_; }

 private:
  void unlatch(GridWorld& world);

  TriggerSpec spec_;
  bool armed_ = false;
  bool completed_ = false;
  std::optional<int> latched_;
  std::vector<PosPair> window_;
};

}  // namespace blastlab
