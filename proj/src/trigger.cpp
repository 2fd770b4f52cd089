#include "blastlab/trigger.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "blastlab/errors.hpp"

namespace blastlab {

using nlohmann::json;

namespace {
constexpr double kEqTolerance = 1e-9;
}

bool eval_atom(const SpatialConstraint& c, double bx, double by, double ex, double ey) {
  const double fe = c.feature == Feature::X ? ex : ey;
  const double fb = c.feature == Feature::X ? bx : by;
  double v = 0.0;
  switch (c.op) {
    case ArithOp::Add: v = fe + fb; break;
    case ArithOp::Subtract: v = fe - fb; break;
    case ArithOp::Multiply: v = fe * fb; break;
    case ArithOp::Divide:
      if (fb == 0.0) return false;  // fails closed
      v = fe / fb;
      break;
  }
  switch (c.relator) {
    case Relator::Greater: return v > c.constant;
    case Relator::GreaterEq: return v >= c.constant;
    case Relator::Less: return v < c.constant;
    case Relator::LessEq: return v <= c.constant;
    case Relator::Equal: return std::abs(v - c.constant) <= kEqTolerance;
    case Relator::NotEqual: return std::abs(v - c.constant) > kEqTolerance;
  }
  return false;
}

Formula::Ptr Formula::atom(SpatialConstraint c) {
  auto f = std::make_shared<Formula>();
  f->kind_ = Kind::Atom;
  f->constraint_ = c;
  return f;
}

Formula::Ptr Formula::conj(Ptr l, Ptr r) {
  auto f = std::make_shared<Formula>();
  f->kind_ = Kind::And;
  f->children_ = {std::move(l), std::move(r), nullptr};
  return f;
}

Formula::Ptr Formula::disj(Ptr l, Ptr r) {
  auto f = std::make_shared<Formula>();
  f->kind_ = Kind::Or;
  f->children_ = {std::move(l), std::move(r), nullptr};
  return f;
}

Formula::Ptr Formula::ite(Ptr cond, Ptr then_f, Ptr else_f) {
  auto f = std::make_shared<Formula>();
  f->kind_ = Kind::Ite;
  f->children_ = {std::move(cond), std::move(then_f), std::move(else_f)};
  return f;
}

int Formula::max_offset() const {
  switch (kind_) {
    case Kind::Atom: return constraint_.offset;
    case Kind::And:
    case Kind::Or:
      return std::max(children_[0]->max_offset(), children_[1]->max_offset());
    case Kind::Ite:
      return std::max(children_[0]->max_offset(),
                      std::max(children_[1]->max_offset(), children_[2]->max_offset()));
  }
  return 0;
}

void Formula::collect_atoms(std::vector<SpatialConstraint>& out) const {
  switch (kind_) {
    case Kind::Atom: out.push_back(constraint_); return;
    case Kind::And:
    case Kind::Or:
      children_[0]->collect_atoms(out);
      children_[1]->collect_atoms(out);
      return;
    case Kind::Ite:
      children_[0]->collect_atoms(out);
      children_[1]->collect_atoms(out);
      children_[2]->collect_atoms(out);
      return;
  }
}

bool eval_formula(const Formula::Ptr& f, std::span<const PosPair> window) {
  if (!f) throw ContractError("eval_formula: null formula");
  switch (f->kind()) {
    case Formula::Kind::Atom: {
      const auto& c = f->constraint();
      const int idx = static_cast<int>(window.size()) - 1 - c.offset;
      if (idx < 0)
        throw ContractError("atom offset " + std::to_string(c.offset) +
                            " outside window of length " + std::to_string(window.size()));
      const PosPair& p = window[static_cast<std::size_t>(idx)];
      return eval_atom(c, p.bx, p.by, p.ex, p.ey);
    }
    case Formula::Kind::And:
      return eval_formula(f->child(0), window) && eval_formula(f->child(1), window);
    case Formula::Kind::Or:
      return eval_formula(f->child(0), window) || eval_formula(f->child(1), window);
    case Formula::Kind::Ite:
      return eval_formula(f->child(0), window) ? eval_formula(f->child(1), window)
                                               : eval_formula(f->child(2), window);
  }
  return false;
}

void TriggerSpec::validate() const {
  if (!formula) throw ContractError("trigger: missing formula");
  if (window_len <= 0) throw ContractError("trigger: window length must be positive");
  if (static_cast<int>(actions.size()) != window_len)
    throw ContractError("trigger: |actions| = " + std::to_string(actions.size()) +
                        " but window length is " + std::to_string(window_len));
  std::vector<SpatialConstraint> atoms;
  formula->collect_atoms(atoms);
  for (const auto& a : atoms) {
    if (a.offset < 0 || a.offset >= window_len)
      throw ContractError("trigger: atom offset " + std::to_string(a.offset) +
                          " outside window of length " + std::to_string(window_len));
  }
}

bool TriggerSpec::earliest_constraints_hold(double bx, double by, double ex,
                                            double ey) const {
  std::vector<SpatialConstraint> atoms;
  formula->collect_atoms(atoms);
  int earliest = 0;
  for (const auto& a : atoms) earliest = std::max(earliest, a.offset);
  bool any = false;
  for (const auto& a : atoms) {
    if (a.offset != earliest) continue;
    any = true;
    if (!eval_atom(a, bx, by, ex, ey)) return false;
  }
  return any;
}

std::vector<int> scan(std::span<const PosPair> positions,
                      std::span<const std::optional<Action>> attacker_actions,
                      const TriggerSpec& spec) {
  spec.validate();
  if (positions.size() != attacker_actions.size())
    throw ContractError("scan: trajectories must have equal length");
  std::vector<int> fires;
  const int n = static_cast<int>(positions.size());
  const int w = spec.window_len;
  for (int t = w - 1; t < n; ++t) {
    bool actions_ok = true;
    for (int j = 0; j < w && actions_ok; ++j) {
      const auto& want = spec.actions[static_cast<std::size_t>(j)];
      if (!want) continue;  // null matches anything
      const auto& got = attacker_actions[static_cast<std::size_t>(t - w + 1 + j)];
      actions_ok = got.has_value() && *got == *want;
    }
    if (!actions_ok) continue;
    if (eval_formula(spec.formula, positions.subspan(static_cast<std::size_t>(t - w + 1),
                                                     static_cast<std::size_t>(w))))
      fires.push_back(t);
  }
  return fires;
}

// ---- serialization ----------------------------------------------------------

namespace {

const char* op_name(ArithOp op) {
  switch (op) {
    case ArithOp::Add: return "+";
    case ArithOp::Subtract: return "-";
    case ArithOp::Multiply: return "*";
    case ArithOp::Divide: return "/";
  }
  return "?";
}

const char* relator_name(Relator r) {
  switch (r) {
    case Relator::Greater: return ">";
    case Relator::GreaterEq: return ">=";
    case Relator::Less: return "<";
    case Relator::LessEq: return "<=";
    case Relator::Equal: return "==";
    case Relator::NotEqual: return "!=";
  }
  return "?";
}

ArithOp op_from(const std::string& s) {
  if (s == "+") return ArithOp::Add;
  if (s == "-") return ArithOp::Subtract;
  if (s == "*") return ArithOp::Multiply;
  if (s == "/") return ArithOp::Divide;
  throw ConfigError("trigger: unknown operator '" + s + "'");
}

Relator relator_from(const std::string& s) {
  if (s == ">") return Relator::Greater;
  if (s == ">=") return Relator::GreaterEq;
  if (s == "<") return Relator::Less;
  if (s == "<=") return Relator::LessEq;
  if (s == "==") return Relator::Equal;
  if (s == "!=") return Relator::NotEqual;
  throw ConfigError("trigger: unknown relator '" + s + "'");
}

json formula_to_json(const Formula::Ptr& f) {
  switch (f->kind()) {
    case Formula::Kind::Atom: {
      const auto& c = f->constraint();
      return json::array({"atom", c.offset, c.feature == Feature::X ? "x" : "y",
                          op_name(c.op), relator_name(c.relator), c.constant});
    }
    case Formula::Kind::And:
      return json::array({"and", formula_to_json(f->child(0)), formula_to_json(f->child(1))});
    case Formula::Kind::Or:
      return json::array({"or", formula_to_json(f->child(0)), formula_to_json(f->child(1))});
    case Formula::Kind::Ite:
      return json::array({"ite", formula_to_json(f->child(0)), formula_to_json(f->child(1)),
                          formula_to_json(f->child(2))});
  }
  throw ContractError("trigger: unreachable formula kind");
}

Formula::Ptr formula_from_json(const json& j) {
  if (!j.is_array() || j.empty() || !j[0].is_string())
    throw ConfigError("trigger: formula nodes must be tagged arrays");
  const std::string tag = j[0].get<std::string>();
  if (tag == "atom") {
    if (j.size() != 6) throw ConfigError("trigger: atom needs 5 fields");
    SpatialConstraint c;
    c.offset = j[1].get<int>();
    const std::string feat = j[2].get<std::string>();
    if (feat != "x" && feat != "y") throw ConfigError("trigger: feature must be x or y");
    c.feature = feat == "x" ? Feature::X : Feature::Y;
    c.op = op_from(j[3].get<std::string>());
    c.relator = relator_from(j[4].get<std::string>());
    c.constant = j[5].get<double>();
    return Formula::atom(c);
  }
  if (tag == "and" || tag == "or") {
    if (j.size() != 3) throw ConfigError("trigger: " + tag + " needs 2 children");
    auto l = formula_from_json(j[1]);
    auto r = formula_from_json(j[2]);
    return tag == "and" ? Formula::conj(l, r) : Formula::disj(l, r);
  }
  if (tag == "ite") {
    if (j.size() != 4) throw ConfigError("trigger: ite needs 3 children");
    return Formula::ite(formula_from_json(j[1]), formula_from_json(j[2]),
                        formula_from_json(j[3]));
  }
  throw ConfigError("trigger: unknown formula tag '" + tag + "'");
}

}  // namespace

std::string trigger_to_json(const TriggerSpec& spec) {
  json j;
  j["schema"] = "blastlab/trigger/1";
  j["window"] = spec.window_len;
  j["formula"] = formula_to_json(spec.formula);
  json acts = json::array();
  for (const auto& a : spec.actions) acts.push_back(a ? json(action_name(*a)) : json(nullptr));
  j["actions"] = acts;
  return j.dump(2);
}

TriggerSpec trigger_from_json(const std::string& text) {
  json j = json::parse(text);
  if (j.value("schema", "") != "blastlab/trigger/1")
    throw ConfigError("trigger: unknown schema");
  TriggerSpec spec;
  spec.window_len = j["window"].get<int>();
  spec.formula = formula_from_json(j["formula"]);
  for (const auto& a : j["actions"]) {
    if (a.is_null()) {
      spec.actions.push_back(std::nullopt);
    } else {
      auto act = action_from_name(a.get<std::string>());
      if (!act) throw ConfigError("trigger: unknown action '" + a.get<std::string>() + "'");
      spec.actions.push_back(*act);
    }
  }
  spec.validate();
  return spec;
}

TriggerSpec load_trigger(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw MissingArtifactError("cannot open trigger spec: " + path, "");
  std::stringstream ss;
  ss << is.rdbuf();
  return trigger_from_json(ss.str());
}

void save_trigger(const std::string& path, const TriggerSpec& spec) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ConfigError("cannot write trigger spec: " + path);
  os << trigger_to_json(spec) << "\n";
}

// ---- attacker controller ----------------------------------------------------

void AttackerController::arm() {
  armed_ = true;
  completed_ = false;
  latched_.reset();
  window_.clear();
}

void AttackerController::disarm() {
  armed_ = false;
  latched_.reset();
  window_.clear();
}

void AttackerController::unlatch(GridWorld& world) {
  if (latched_) world.set_controlled(*latched_, false);
  latched_.reset();
  window_.clear();
}

AttackerController::StepPlan AttackerController::step(GridWorld& world, int blast_agent) {
  StepPlan plan;
  if (!armed_ || completed_) return plan;

  const auto& core = world.core();
  const Pos b = core.pursuers.at(static_cast<std::size_t>(blast_agent));

  if (latched_ && !core.alive[static_cast<std::size_t>(*latched_)]) unlatch(world);

  if (latched_) {
    const Pos e = core.evaders[static_cast<std::size_t>(*latched_)];
    window_.push_back({static_cast<double>(b.x), static_cast<double>(b.y),
                       static_cast<double>(e.x), static_cast<double>(e.y)});
  } else {
    // Latch the lowest-id alive evader inside the observation window whose
    // relative position satisfies the earliest spatial constraints.
    const int R = world.config().window_radius;
    for (int e = 0; e < world.config().n_evaders; ++e) {
      if (!core.alive[static_cast<std::size_t>(e)]) continue;
      const Pos p = core.evaders[static_cast<std::size_t>(e)];
      if (std::abs(p.x - b.x) > R || std::abs(p.y - b.y) > R) continue;
      if (!spec_.earliest_constraints_hold(b.x, b.y, p.x, p.y)) continue;
      latched_ = e;
      world.set_controlled(e, true);
      window_.clear();
      window_.push_back({static_cast<double>(b.x), static_cast<double>(b.y),
                         static_cast<double>(p.x), static_cast<double>(p.y)});
      break;
    }
  }

  if (!latched_) return plan;

  const int idx = static_cast<int>(window_.size()) - 1;
  if (const auto& a = spec_.actions[static_cast<std::size_t>(idx)])
    plan.overrides[*latched_] = *a;

  if (idx == spec_.window_len - 1) {
    plan.fire = eval_formula(spec_.formula, window_);
    if (plan.fire) completed_ = true;
    unlatch(world);
  }
  return plan;
}

}  // namespace blastlab
