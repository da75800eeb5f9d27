#include "app.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"

namespace extval::app {

namespace {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// JSON access with path-qualified errors

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

std::string index_path(const std::string& path, std::size_t i) { return path + "[" + std::to_string(i) + "]"; }

const json* field(const json& obj, const std::string& key) {
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) return nullptr;
    return &*it;
}

void require_object(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError(path + " must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* a : allowed) known |= it.key() == a;
        if (!known) throw ConfigError("unknown key '" + join(path, it.key()) + "'");
    }
}

const json& need(const json& obj, const std::string& key, const std::string& path) {
    const json* f = field(obj, key);
    if (!f) throw ConfigError(join(path, key) + " is required");
    return *f;
}

double as_number(const json& j, const std::string& path) {
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "inf" || s == "+inf") return kInf;
        if (s == "-inf") return -kInf;
    }
    if (!j.is_number()) throw ConfigError(path + " must be a number");
    return j.get<double>();
}

double as_finite(const json& j, const std::string& path) {
    const double v = as_number(j, path);
    if (!std::isfinite(v)) throw ConfigError(path + " must be finite");
    return v;
}

std::int64_t as_integer(const json& j, const std::string& path) {
    if (!j.is_number_integer()) throw ConfigError(path + " must be an integer");
    return j.get<std::int64_t>();
}

std::size_t as_index(const json& j, const std::string& path) {
    const auto v = as_integer(j, path);
    if (v < 0) throw ConfigError(path + " must be >= 0");
    return static_cast<std::size_t>(v);
}

std::string as_string(const json& j, const std::string& path) {
    if (!j.is_string()) throw ConfigError(path + " must be a string");
    return j.get<std::string>();
}

bool as_bool(const json& j, const std::string& path) {
    if (!j.is_boolean()) throw ConfigError(path + " must be true or false");
    return j.get<bool>();
}

const json& as_array(const json& j, const std::string& path) {
    if (!j.is_array()) throw ConfigError(path + " must be an array");
    return j;
}

std::vector<double> as_numbers(const json& j, const std::string& path) {
    std::vector<double> out;
    for (std::size_t i = 0; i < as_array(j, path).size(); ++i) out.push_back(as_finite(j[i], index_path(path, i)));
    return out;
}

std::vector<std::size_t> as_indices(const json& j, const std::string& path) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < as_array(j, path).size(); ++i) out.push_back(as_index(j[i], index_path(path, i)));
    return out;
}

double number_or(const json& obj, const std::string& key, const std::string& path, double fallback) {
    const json* f = field(obj, key);
    return f ? as_finite(*f, join(path, key)) : fallback;
}

// ---------------------------------------------------------------------------
// Sections

SupportBounds parse_bounds(const json& j) {
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "binary") return SupportBounds::binary();
        if (s == "unbounded") return SupportBounds::unbounded();
        throw ConfigError("bounds must be 'binary', 'unbounded' or an object");
    }
    require_object(j, "bounds", {"lower", "upper"});
    SupportBounds b;
    if (const json* f = field(j, "lower")) b.y_lower = as_number(*f, "bounds.lower");
    if (const json* f = field(j, "upper")) b.y_upper = as_number(*f, "bounds.upper");
    try {
        b.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("bounds: ") + e.what());
    }
    return b;
}

CouplingAssumption parse_coupling(const json& j) {
    const auto s = as_string(j, "coupling");
    for (auto c : {CouplingAssumption::ConstantTE, CouplingAssumption::PerfectPositiveDependence,
                   CouplingAssumption::ConditionalIndependence, CouplingAssumption::LeastFavorable})
        if (s == to_string(c)) return c;
    throw ConfigError("coupling must be one of constant_te, perfect_positive_dependence, "
                      "conditional_independence, least_favorable");
}

void parse_neighborhood(const json& j, RunConfig& c) {
    const std::string path = "neighborhood";
    require_object(j, path, {"epsilon", "epsilon_grid", "shift", "order", "covariate_scale"});
    auto& n = c.neighborhood;
    if (const json* f = field(j, "epsilon")) n.epsilon = as_finite(*f, join(path, "epsilon"));
    if (const json* f = field(j, "epsilon_grid")) {
        c.epsilon_grid = as_numbers(*f, join(path, "epsilon_grid"));
        for (double e : c.epsilon_grid)
            if (e < 0.0) throw ConfigError("neighborhood.epsilon_grid values must be >= 0");
        if (!std::is_sorted(c.epsilon_grid.begin(), c.epsilon_grid.end()))
            throw ConfigError("neighborhood.epsilon_grid must be sorted ascending");
    }
    if (const json* f = field(j, "shift")) {
        const auto s = as_string(*f, join(path, "shift"));
        if (s == "outcomes") n.shift_kind = ShiftKind::PotentialOutcomesOnly;
        else if (s == "outcomes_and_covariates") n.shift_kind = ShiftKind::PotentialOutcomesAndCovariates;
        else throw ConfigError("neighborhood.shift must be 'outcomes' or 'outcomes_and_covariates'");
    }
    if (const json* f = field(j, "order")) n.order = static_cast<int>(as_integer(*f, join(path, "order")));
    if (const json* f = field(j, "covariate_scale")) n.covariate_scale = as_numbers(*f, join(path, "covariate_scale"));
}

void parse_estimators(const json& j, EstimatorConfig& e) {
    const std::string path = "estimators";
    require_object(j, path, {"effect", "kernel", "rank_effect_column", "negative_rank_effect_column", "y0"});
    if (const json* f = field(j, "effect")) {
        const std::string p = join(path, "effect");
        require_object(*f, p, {"method", "basis", "column", "dim", "cuts"});
        const auto method = as_string(need(*f, "method", p), join(p, "method"));
        if (method == "regression") e.effect.method = EffectConfig::Method::Regression;
        else if (method == "column") e.effect.method = EffectConfig::Method::Column;
        else if (method == "iv") e.effect.method = EffectConfig::Method::Iv;
        else throw ConfigError(p + ".method must be 'regression', 'column' or 'iv'");
        if (const json* b = field(*f, "basis")) {
            const auto s = as_string(*b, join(p, "basis"));
            if (s == "constant") e.effect.basis.kind = Basis::Kind::Constant;
            else if (s == "linear") e.effect.basis.kind = Basis::Kind::Linear;
            else if (s == "quadratic") e.effect.basis.kind = Basis::Kind::Quadratic;
            else throw ConfigError(p + ".basis must be 'constant', 'linear' or 'quadratic'");
        }
        if (e.effect.method == EffectConfig::Method::Column)
            e.effect.column = as_string(need(*f, "column", p), join(p, "column"));
        if (const json* d = field(*f, "dim")) e.effect.iv_dim = as_index(*d, join(p, "dim"));
        if (const json* cu = field(*f, "cuts")) e.effect.iv_cuts = as_numbers(*cu, join(p, "cuts"));
    }
    if (const json* f = field(j, "kernel")) {
        const std::string p = join(path, "kernel");
        require_object(*f, p, {"bandwidth", "grouping"});
        if (const json* b = field(*f, "bandwidth")) {
            e.kernel.multiplier = as_finite(*b, join(p, "bandwidth"));
            if (!(*e.kernel.multiplier > 0.0)) throw ConfigError(p + ".bandwidth must be positive");
        }
        if (const json* g = field(*f, "grouping")) {
            const auto s = as_string(*g, join(p, "grouping"));
            if (s == "x") e.kernel.grouping = Grouping::UseX;
            else if (s == "x_and_c") e.kernel.grouping = Grouping::UseXandC;
            else throw ConfigError(p + ".grouping must be 'x' or 'x_and_c'");
        }
    }
    if (const json* f = field(j, "rank_effect_column"))
        e.rank_effect_column = as_string(*f, join(path, "rank_effect_column"));
    if (const json* f = field(j, "negative_rank_effect_column"))
        e.negative_rank_effect_column = as_string(*f, join(path, "negative_rank_effect_column"));
    if (const json* f = field(j, "y0")) {
        const std::string p = join(path, "y0");
        require_object(*f, p, {"method", "value", "propensity"});
        const auto method = as_string(need(*f, "method", p), join(p, "method"));
        if (method == "value") {
            e.y0_value = as_finite(need(*f, "value", p), join(p, "value"));
        } else if (method == "ipw") {
            e.y0_propensity = as_finite(need(*f, "propensity", p), join(p, "propensity"));
            if (!(*e.y0_propensity > 0.0 && *e.y0_propensity < 1.0))
                throw ConfigError(p + ".propensity must lie in (0, 1)");
        } else if (method != "control_mean") {
            throw ConfigError(p + ".method must be 'control_mean', 'ipw' or 'value'");
        }
    }
}

// ---------------------------------------------------------------------------
// Data and estimates

struct Loaded {
    csv::Table table;
    std::optional<Dataset> data;
};

Loaded load_data(const RunConfig& c) {
    if (!c.input) throw ConfigError("input is required (config 'input' or --input)");
    std::ifstream f(*c.input, std::ios::binary);
    if (!f) throw ConfigError("cannot open input file " + c.input->string());
    Loaded out;
    out.table = csv::read_table(f);
    try {
        out.data.emplace(csv::read_dataset(out.table, c.columns, c.bounds));
    } catch (const DataError&) {
        throw;
    } catch (const InvalidArgument& e) {
        // Missing columns are configuration errors.
        throw ConfigError(e.what());
    }
    return out;
}

void check_rule_dim(const PolicyRule& rule, std::size_t k, const std::string& path) {
    if (auto d = rule.required_dim(); d && *d != k)
        throw ConfigError(path + " uses " + std::to_string(*d) + " covariates but the data has " + std::to_string(k));
    if (rule.min_dim() > k)
        throw ConfigError(path + " refers to covariate " + std::to_string(rule.min_dim() - 1) + " but the data has " +
                          std::to_string(k));
}

std::vector<double> effect_column(const Loaded& l, const std::string& name) {
    if (!l.table.find(name)) throw ConfigError("column '" + name + "' not found in input header");
    return csv::numeric_column(l.table, name);
}

EstimatorBundle build_bundle(const RunConfig& c, const Loaded& l, std::vector<std::string>& warnings) {
    const Dataset& data = *l.data;
    const auto& e = c.estimators;
    EstimatorBundle b;
    try {
        if (e.y0_value) {
            b.y0_mean = *e.y0_value;
        } else if (e.y0_propensity) {
            const double p = *e.y0_propensity;
            b.y0_mean = estimate_y0_mean(data, Y0Method::ipw([p](std::span<const double>) { return p; }));
        } else {
            b.y0_mean = estimate_y0_mean(data);
        }
        auto kernel = [&]() {
            auto cdfs = std::make_shared<const ConditionalCdfs>(ConditionalCdfs::fit(data, e.kernel));
            for (const auto& w : cdfs->warnings()) warnings.push_back(w);
            return cdfs;
        };
        switch (c.coupling) {
            case CouplingAssumption::ConstantTE:
                if (e.effect.method == EffectConfig::Method::Column) {
                    b.delta_x = effect_column(l, e.effect.column);
                } else if (e.effect.method == EffectConfig::Method::Iv) {
                    const auto cells = e.effect.iv_cuts.empty() ? CellPartition::single()
                                                                : CellPartition::cuts_on(e.effect.iv_dim, e.effect.iv_cuts);
                    const auto fit = fit_delta_iv(data, cells);
                    b.delta_fn = fit.function();
                } else {
                    const auto fit = fit_delta_regression(data, e.effect.basis);
                    for (const auto& w : fit.warnings) warnings.push_back(w);
                    b.delta_fn = fit.function();
                }
                break;
            case CouplingAssumption::PerfectPositiveDependence:
                if (e.rank_effect_column) b.delta_i = effect_column(l, *e.rank_effect_column);
                else b.delta_i = rank_effects(data, *kernel());
                break;
            case CouplingAssumption::LeastFavorable:
                if (e.negative_rank_effect_column) b.delta_star_i = effect_column(l, *e.negative_rank_effect_column);
                else b.delta_star_i = negative_rank_effects(data, *kernel());
                break;
            case CouplingAssumption::ConditionalIndependence: b.cond_cdfs = kernel(); break;
        }
        b.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const DataError&) {
        throw;
    } catch (const Error& ex) {
        throw DataError(std::string("estimation failed: ") + ex.what());
    }
    return b;
}

// ---------------------------------------------------------------------------
// Policy classes

std::vector<PolicyRule> class_rules(const RunConfig& c, const Dataset& data) {
    std::vector<PolicyRule> rules;
    if (c.policy_class) {
        const std::string p = "policy_class";
        const json& j = *c.policy_class;
        require_object(j, p,
                       {"kind", "dims", "signs", "cuts", "max_cuts", "angles", "offsets", "rules", "include_constant",
                        "sample"});
        PolicyClassSpec spec;
        const auto kind = as_string(need(j, "kind", p), join(p, "kind"));
        if (kind == "threshold") {
            ThresholdGrid g;
            g.dims = as_indices(need(j, "dims", p), join(p, "dims"));
            for (std::size_t d : g.dims)
                if (d >= data.dim()) throw ConfigError(p + ".dims refers to a covariate the data lacks");
            if (const json* s = field(j, "signs")) {
                for (std::size_t i = 0; i < as_array(*s, join(p, "signs")).size(); ++i) {
                    std::vector<int> pattern;
                    const auto sp = index_path(join(p, "signs"), i);
                    for (std::size_t k = 0; k < as_array((*s)[i], sp).size(); ++k)
                        pattern.push_back(static_cast<int>(as_integer((*s)[i][k], index_path(sp, k))));
                    g.sign_patterns.push_back(std::move(pattern));
                }
            }
            const json& cuts = need(j, "cuts", p);
            const std::size_t max_cuts = field(j, "max_cuts") ? as_index(j["max_cuts"], join(p, "max_cuts")) : 0;
            if (cuts.is_string()) {
                if (cuts.get<std::string>() != "observed") throw ConfigError(p + ".cuts must be 'observed' or a list");
                for (std::size_t d : g.dims) g.cuts.push_back(unique_cuts(data, d, max_cuts));
            } else {
                for (std::size_t i = 0; i < as_array(cuts, join(p, "cuts")).size(); ++i)
                    g.cuts.push_back(as_numbers(cuts[i], index_path(join(p, "cuts"), i)));
            }
            spec.family = std::move(g);
        } else if (kind == "linear") {
            LinearGrid g;
            g.dims = as_indices(need(j, "dims", p), join(p, "dims"));
            g.angles = as_numbers(need(j, "angles", p), join(p, "angles"));
            g.offsets = as_numbers(need(j, "offsets", p), join(p, "offsets"));
            spec.family = std::move(g);
        } else if (kind == "list") {
            ExplicitList g;
            const json& list = need(j, "rules", p);
            for (std::size_t i = 0; i < as_array(list, join(p, "rules")).size(); ++i)
                g.rules.push_back(parse_rule(list[i], index_path(join(p, "rules"), i)));
            spec.family = std::move(g);
        } else {
            throw ConfigError(p + ".kind must be 'threshold', 'linear' or 'list'");
        }
        if (const json* f = field(j, "include_constant")) spec.include_constant = as_bool(*f, join(p, "include_constant"));
        try {
            rules = enumerate_rules(spec, data.dim());
        } catch (const InvalidArgument& e) {
            throw ConfigError(p + ": " + e.what());
        }
        if (const json* f = field(j, "sample")) rules = sample_rules(rules, as_index(*f, join(p, "sample")), c.seed);
    } else if (c.rules) {
        for (std::size_t i = 0; i < as_array(*c.rules, "rules").size(); ++i)
            rules.push_back(parse_rule((*c.rules)[i], index_path("rules", i)));
    } else if (c.rule) {
        rules.push_back(parse_rule(*c.rule, "rule"));
    }
    if (rules.empty()) throw ConfigError("policy class is empty");
    for (std::size_t i = 0; i < rules.size(); ++i) check_rule_dim(rules[i], data.dim(), index_path("rules", i));
    return rules;
}

// ---------------------------------------------------------------------------
// Output

std::string dump(const json& j) { return j.dump(2) + "\n"; }

void emit(const RunConfig& c, const std::string& content, std::ostream& out) {
    if (c.output) write_atomically(*c.output, content);
    else out << content;
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json warnings_json(const std::vector<std::string>& w) { return w; }

void echo_warnings(const std::vector<std::string>& w, std::ostream& err) {
    for (const auto& s : w) err << "warning: " << s << "\n";
}

// ---------------------------------------------------------------------------
// Commands

int cmd_evaluate(const RunConfig& c, std::ostream& out, std::ostream& err) {
    if (!c.rule) throw ConfigError("evaluate needs exactly one rule in 'rule'");
    if (c.rules || c.policy_class) throw ConfigError("evaluate takes a single 'rule', not 'rules' or 'policy_class'");
    const auto rule = parse_rule(*c.rule, "rule");
    const auto loaded = load_data(c);
    const Dataset& data = *loaded.data;
    check_rule_dim(rule, data.dim(), "rule");
    std::vector<std::string> warnings;
    const auto bundle = build_bundle(c, loaded, warnings);
    CriterionResult r;
    try {
        r = rw_empirical(data, rule, c.coupling, bundle, c.neighborhood, data.bounds());
    } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
    }
    json rep;
    rep["rule"] = rule.encode();
    rep["epsilon"] = c.neighborhood.epsilon;
    rep["value"] = number_or_null(r.value);
    rep["eta_star"] = r.eta_star ? json(*r.eta_star) : json(nullptr);
    rep["floor_binding"] = r.floor_binding;
    rep["coupling"] = to_string(c.coupling);
    rep["n"] = data.size();
    if (r.unbounded) rep["unbounded"] = true;
    if (!warnings.empty()) rep["warnings"] = warnings_json(warnings);
    echo_warnings(warnings, err);
    emit(c, dump(rep), out);
    return kExitOk;
}

int cmd_search(const RunConfig& c, std::ostream& out, std::ostream& err) {
    const auto loaded = load_data(c);
    const Dataset& data = *loaded.data;
    const auto rules = class_rules(c, data);
    std::vector<std::string> warnings;
    const auto bundle = build_bundle(c, loaded, warnings);
    SearchReport r;
    try {
        r = maximize(data, rules, c.coupling, bundle, c.neighborhood, data.bounds(), c.threads);
    } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
    }
    json rep;
    rep["best_rule"] = r.best_rule.encode();
    rep["value"] = number_or_null(r.best_value);
    rep["eta_star"] = r.best_result.eta_star ? json(*r.best_result.eta_star) : json(nullptr);
    rep["floor_binding"] = r.best_result.floor_binding;
    rep["epsilon"] = c.neighborhood.epsilon;
    rep["coupling"] = to_string(c.coupling);
    rep["n"] = data.size();
    rep["rules_evaluated"] = rules.size();
    rep["optimization_gap"] = r.optimization_gap;
    if (c.per_rule_table) {
        json table = json::array();
        for (std::size_t i = 0; i < rules.size(); ++i)
            table.push_back({{"rule_id", i}, {"rule", rules[i].encode()}, {"value", number_or_null(r.values[i].value)}});
        rep["table"] = std::move(table);
    }
    if (!warnings.empty()) rep["warnings"] = warnings_json(warnings);
    echo_warnings(warnings, err);
    emit(c, dump(rep), out);
    return kExitOk;
}

int cmd_curve(const RunConfig& c, std::ostream& out, std::ostream& err) {
    if (c.epsilon_grid.empty()) throw ConfigError("curve needs neighborhood.epsilon_grid");
    const auto loaded = load_data(c);
    const Dataset& data = *loaded.data;
    const auto rules = class_rules(c, data);
    std::vector<std::string> warnings;
    const auto bundle = build_bundle(c, loaded, warnings);
    std::vector<CurveRow> rows;
    try {
        rows = epsilon_curve(data, rules, c.coupling, bundle, c.neighborhood, c.epsilon_grid, data.bounds(), c.threads);
    } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
    }
    echo_warnings(warnings, err);
    emit(c, format_curve_csv(rows), out);
    return kExitOk;
}

enum class CheckCriterion { Welfare, AteLower, AteUpper, Alternative };

int cmd_oracle_check(const RunConfig& c, std::ostream& out, std::ostream& err) {
    namespace oc = oracle;
    if (!c.oracle_check) throw ConfigError("oracle-check needs an 'oracle_check' section");
    const json& j = *c.oracle_check;
    const std::string p = "oracle_check";
    require_object(j, p, {"criterion", "rule", "atoms", "grid"});
    const auto rule = parse_rule(need(j, "rule", p), join(p, "rule"));
    CheckCriterion crit = CheckCriterion::Welfare;
    if (const json* f = field(j, "criterion")) {
        const auto s = as_string(*f, join(p, "criterion"));
        if (s == "welfare") crit = CheckCriterion::Welfare;
        else if (s == "ate_lower") crit = CheckCriterion::AteLower;
        else if (s == "ate_upper") crit = CheckCriterion::AteUpper;
        else if (s == "alternative") crit = CheckCriterion::Alternative;
        else throw ConfigError(p + ".criterion must be 'welfare', 'ate_lower', 'ate_upper' or 'alternative'");
    }
    const json& aj = need(j, "atoms", p);
    const std::string ap = join(p, "atoms");
    if (as_array(aj, ap).size() > 50) throw ConfigError(ap + " lists more than 50 atoms; the oracle is for small instances");
    std::vector<oc::JointAtom> atoms;
    for (std::size_t i = 0; i < aj.size(); ++i) {
        const auto ip = index_path(ap, i);
        require_object(aj[i], ip, {"x", "y0", "y1", "mass"});
        oc::JointAtom a;
        a.x = as_numbers(need(aj[i], "x", ip), join(ip, "x"));
        a.y0 = as_finite(need(aj[i], "y0", ip), join(ip, "y0"));
        a.y1 = as_finite(need(aj[i], "y1", ip), join(ip, "y1"));
        a.mass = as_finite(need(aj[i], "mass", ip), join(ip, "mass"));
        if (!c.bounds.contains(a.y0) || !c.bounds.contains(a.y1)) throw ConfigError(ip + " lies outside the bounds");
        if (i > 0 && a.x.size() != atoms[0].x.size()) throw ConfigError(ip + ".x has the wrong dimension");
        atoms.push_back(std::move(a));
    }
    oc::GridOptions g;
    if (const json* f = field(j, "grid")) {
        const std::string gp = join(p, "grid");
        require_object(*f, gp, {"steps", "include_floor", "include_ceiling", "nudge", "move_covariates"});
        if (const json* s = field(*f, "steps")) g.steps = static_cast<int>(as_index(*s, join(gp, "steps")));
        if (const json* s = field(*f, "include_floor")) g.include_floor = as_bool(*s, join(gp, "include_floor"));
        if (const json* s = field(*f, "include_ceiling")) g.include_ceiling = as_bool(*s, join(gp, "include_ceiling"));
        if (const json* s = field(*f, "nudge")) g.nudge = as_finite(*s, join(gp, "nudge"));
        if (const json* s = field(*f, "move_covariates"))
            g.move_covariates = as_bool(*s, join(gp, "move_covariates"));
    }
    const auto& nb = c.neighborhood;
    const bool joint = nb.shift_kind == ShiftKind::PotentialOutcomesAndCovariates;
    if (joint && crit != CheckCriterion::Welfare) throw ConfigError("joint shifts are checked for the welfare criterion only");

    double closed = 0.0;
    oc::TransportInstance inst;
    inst.source = atoms;
    inst.budget = nb.epsilon;
    inst.order = nb.order;
    try {
        oc::validate_masses(atoms, "oracle_check.atoms");
        check_rule_dim(rule, atoms[0].x.size(), join(p, "rule"));
        nb.validate();
        double ate = 0, welfare = 0, y0 = 0, y1_tau = 0, e_tau = 0;
        std::vector<std::vector<double>> xs;
        std::vector<double> w, delta;
        for (const auto& a : atoms) {
            const int t = evaluate_rule(rule, a.x);
            ate += a.mass * (a.y1 - a.y0);
            welfare += a.mass * (t ? a.y1 : a.y0);
            y0 += a.mass * a.y0;
            y1_tau += a.mass * (t ? a.y1 : 0.0);
            e_tau += a.mass * t;
            xs.push_back(a.x);
            w.push_back(a.mass);
            delta.push_back(a.y1 - a.y0);
        }
        if (joint) {
            const auto scale = nb.scale_for(atoms[0].x.size());
            closed = JointCriterion(rule, xs, w, delta, y0, scale).evaluate(nb.epsilon, c.bounds).value;
            inst.objective = oc::welfare_objective(rule);
            inst.cost = oc::make_cost(oc::GroundMetric::OutcomesAndCovariates, 1, scale);
            if (!field(j.value("grid", json::object()), "move_covariates")) g.move_covariates = true;
            g.scale = scale;
        } else {
            inst.cost = oc::make_cost(oc::GroundMetric::OutcomesOnly, nb.order);
            switch (crit) {
                case CheckCriterion::Welfare:
                    closed = nb.order == 2 ? rw_po_order2(welfare, nb, c.bounds).value : rw_po(welfare, nb, c.bounds).value;
                    inst.objective = oc::welfare_objective(rule);
                    break;
                case CheckCriterion::AteLower:
                    closed = ate_bounds(ate, nb, c.bounds).lower;
                    inst.objective = oc::effect_objective();
                    g.lower_control = false;
                    break;
                case CheckCriterion::AteUpper:
                    closed = ate_bounds(ate, nb, c.bounds).upper;
                    inst.objective = oc::effect_objective();
                    inst.maximize = true;
                    g.lower_treated = false;
                    break;
                case CheckCriterion::Alternative:
                    closed = rw_alternative(y1_tau, y0, e_tau, nb, c.bounds).value;
                    inst.objective = oc::gain_objective(rule);
                    g.lower_control = false;
                    break;
            }
            if (nb.order == 2 && crit != CheckCriterion::Welfare) throw ConfigError("order 2 is checked for welfare only");
        }
        inst.targets = oc::proof_targets(atoms, rule, nb.epsilon, c.bounds, g);
    } catch (const ConfigError&) {
        throw;
    } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("oracle_check: ") + e.what());
    }
    const auto res = oc::worst_case(inst);
    // Weak duality: a grid-restricted adversary can never beat the closed form.
    const double gap = inst.maximize ? closed - res.value : res.value - closed;
    const double tol = 1e-7 * (1.0 + std::abs(closed));
    json rep;
    rep["criterion"] = j.value("criterion", "welfare");
    rep["rule"] = rule.encode();
    rep["epsilon"] = nb.epsilon;
    rep["shift"] = joint ? "outcomes_and_covariates" : "outcomes";
    rep["closed_form"] = number_or_null(closed);
    rep["oracle"] = res.value;
    rep["gap"] = number_or_null(gap);
    rep["atoms"] = atoms.size();
    rep["targets"] = inst.targets.size();
    rep["weak_duality"] = !(gap < -tol);
    emit(c, dump(rep), out);
    if (gap < -tol) throw CheckFailed("weak duality violated: oracle beats the closed form by " + std::to_string(-gap));
    if (gap > 1e-6) err << "warning: positive duality gap " << gap << "; the target grid may be too coarse\n";
    return kExitOk;
}

datagen::NoiseLaw parse_noise(const json* j, const std::string& path) {
    if (!j) return {};
    require_object(*j, path, {"kind", "scale"});
    const auto kind = as_string(need(*j, "kind", path), join(path, "kind"));
    const double scale = number_or(*j, "scale", path, 0.0);
    if (kind == "none") return datagen::NoiseLaw::none();
    if (kind == "normal") return datagen::NoiseLaw::normal(scale);
    if (kind == "uniform") return datagen::NoiseLaw::uniform(scale);
    throw ConfigError(path + ".kind must be 'none', 'normal' or 'uniform'");
}

datagen::DgpSpec parse_dgp(const json& j, const RunConfig& c) {
    using namespace datagen;
    const std::string p = "generate";
    DgpSpec spec;
    spec.bounds = c.bounds;
    spec.seed = c.seed;
    const json& m = need(j, "model", p);
    const std::string mp = join(p, "model");
    const auto kind = as_string(need(m, "kind", mp), join(mp, "kind"));
    auto nums = [&](const char* key) { return as_numbers(need(m, key, mp), join(mp, key)); };
    if (kind == "linear_constant_te") {
        require_object(m, mp, {"kind", "intercept", "beta", "effect_intercept", "effect_coef", "noise", "effect_noise"});
        spec.outcome = LinearConstantTE{number_or(m, "intercept", mp, 0.0), nums("beta"),
                                        number_or(m, "effect_intercept", mp, 0.0), nums("effect_coef"),
                                        parse_noise(field(m, "noise"), join(mp, "noise")),
                                        parse_noise(field(m, "effect_noise"), join(mp, "effect_noise"))};
    } else if (kind == "rank_invariant") {
        require_object(m, mp, {"kind", "location", "beta", "base", "shift_intercept", "shift_coef"});
        spec.outcome = RankInvariant{number_or(m, "location", mp, 0.0), nums("beta"),
                                     parse_noise(field(m, "base"), join(mp, "base")),
                                     number_or(m, "shift_intercept", mp, 0.0), nums("shift_coef")};
    } else if (kind == "factor") {
        require_object(m, mp, {"kind", "beta0", "beta1", "lambda0", "lambda1", "group_effects", "noise0", "noise1"});
        spec.outcome = FactorModel{nums("beta0"),
                                   nums("beta1"),
                                   number_or(m, "lambda0", mp, 0.0),
                                   number_or(m, "lambda1", mp, 1.0),
                                   nums("group_effects"),
                                   parse_noise(field(m, "noise0"), join(mp, "noise0")),
                                   parse_noise(field(m, "noise1"), join(mp, "noise1"))};
    } else {
        throw ConfigError(mp + ".kind must be 'linear_constant_te', 'rank_invariant' or 'factor'");
    }
    if (const json* cv = field(j, "covariates")) {
        const std::string cp = join(p, "covariates");
        const auto ck = as_string(need(*cv, "kind", cp), join(cp, "kind"));
        if (ck == "uniform") {
            require_object(*cv, cp, {"kind", "lower", "upper"});
            spec.covariates = UniformCovariates{as_numbers(need(*cv, "lower", cp), join(cp, "lower")),
                                                as_numbers(need(*cv, "upper", cp), join(cp, "upper"))};
        } else if (ck == "grid") {
            require_object(*cv, cp, {"kind", "values"});
            DiscreteGridCovariates g;
            const json& v = need(*cv, "values", cp);
            for (std::size_t i = 0; i < as_array(v, join(cp, "values")).size(); ++i)
                g.values.push_back(as_numbers(v[i], index_path(join(cp, "values"), i)));
            spec.covariates = std::move(g);
        } else if (ck == "normal") {
            require_object(*cv, cp, {"kind", "mean", "sd"});
            spec.covariates = NormalCovariates{as_numbers(need(*cv, "mean", cp), join(cp, "mean")),
                                               as_numbers(need(*cv, "sd", cp), join(cp, "sd"))};
        } else {
            throw ConfigError(cp + ".kind must be 'uniform', 'grid' or 'normal'");
        }
    }
    if (const json* as = field(j, "assignment")) {
        const std::string ap = join(p, "assignment");
        const auto ak = as_string(need(*as, "kind", ap), join(ap, "kind"));
        if (ak == "randomized") {
            require_object(*as, ap, {"kind", "p"});
            spec.assignment = Randomized{number_or(*as, "p", ap, 0.5)};
        } else if (ak == "propensity") {
            require_object(*as, ap, {"kind", "intercept", "coef"});
            spec.assignment = Propensity{number_or(*as, "intercept", ap, 0.0),
                                         as_numbers(need(*as, "coef", ap), join(ap, "coef"))};
        } else if (ak == "instrumented") {
            require_object(*as, ap, {"kind", "p_z", "complier_share", "noncomplier_p"});
            spec.assignment = Instrumented{number_or(*as, "p_z", ap, 0.5), number_or(*as, "complier_share", ap, 0.8),
                                           number_or(*as, "noncomplier_p", ap, 0.5)};
        } else {
            throw ConfigError(ap + ".kind must be 'randomized', 'propensity' or 'instrumented'");
        }
    }
    try {
        spec.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("generate: ") + e.what());
    }
    return spec;
}

int cmd_generate(const RunConfig& c, std::ostream& out, std::ostream&) {
    if (!c.generate) throw ConfigError("generate needs a 'generate' section");
    const json& j = *c.generate;
    require_object(j, "generate", {"n", "model", "covariates", "assignment", "include_truth"});
    const std::size_t n = as_index(need(j, "n", "generate"), "generate.n");
    if (n == 0) throw ConfigError("generate.n must be >= 1");
    const auto spec = parse_dgp(j, c);
    datagen::Generated g = [&] {
        try {
            return datagen::generate(spec, n, c.threads);
        } catch (const InvalidArgument& e) {
            throw DataError(std::string("generated data invalid: ") + e.what());
        }
    }();
    std::vector<csv::ExtraColumn> extra;
    if (const json* f = field(j, "include_truth"); f && as_bool(*f, "generate.include_truth")) {
        extra.push_back({"y0_true", g.truth.y0});
        extra.push_back({"y1_true", g.truth.y1});
        extra.push_back({"effect_true", g.truth.effect_x});
    }
    std::ostringstream s;
    csv::write_dataset(s, g.data, extra);
    emit(c, s.str(), out);
    return kExitOk;
}

} // namespace

// ---------------------------------------------------------------------------
// Public entry points

PolicyRule parse_rule(const json& j, const std::string& path) {
    if (!j.is_object()) throw ConfigError(path + " must be an object");
    const auto type = as_string(need(j, "type", path), join(path, "type"));
    try {
        if (type == "constant") {
            require_object(j, path, {"type", "treat"});
            return PolicyRule::constant(static_cast<int>(as_integer(need(j, "treat", path), join(path, "treat"))));
        }
        if (type == "linear") {
            require_object(j, path, {"type", "intercept", "coef"});
            return PolicyRule::linear(number_or(j, "intercept", path, 0.0),
                                      as_numbers(need(j, "coef", path), join(path, "coef")));
        }
        if (type == "threshold") {
            require_object(j, path, {"type", "cuts"});
            std::vector<ThresholdCut> cuts;
            const json& cj = need(j, "cuts", path);
            for (std::size_t i = 0; i < as_array(cj, join(path, "cuts")).size(); ++i) {
                const auto cp = index_path(join(path, "cuts"), i);
                require_object(cj[i], cp, {"dim", "sign", "cut"});
                cuts.push_back({as_index(need(cj[i], "dim", cp), join(cp, "dim")),
                                static_cast<int>(as_integer(need(cj[i], "sign", cp), join(cp, "sign"))),
                                as_finite(need(cj[i], "cut", cp), join(cp, "cut"))});
            }
            return PolicyRule::threshold(std::move(cuts));
        }
        if (type == "tree") {
            require_object(j, path, {"type", "dims", "nodes"});
            const std::size_t k = as_index(need(j, "dims", path), join(path, "dims"));
            std::vector<TreeNode> nodes;
            const json& nj = need(j, "nodes", path);
            for (std::size_t i = 0; i < as_array(nj, join(path, "nodes")).size(); ++i) {
                const auto np = index_path(join(path, "nodes"), i);
                if (const json* leaf = field(nj[i], "leaf")) {
                    require_object(nj[i], np, {"leaf"});
                    nodes.push_back(TreeNode::make_leaf(static_cast<int>(as_integer(*leaf, join(np, "leaf")))));
                } else {
                    require_object(nj[i], np, {"split", "threshold", "left", "right"});
                    nodes.push_back(TreeNode::make_split(as_index(need(nj[i], "split", np), join(np, "split")),
                                                         as_finite(need(nj[i], "threshold", np), join(np, "threshold")),
                                                         as_index(need(nj[i], "left", np), join(np, "left")),
                                                         as_index(need(nj[i], "right", np), join(np, "right"))));
                }
            }
            return tree_rule(nodes, k);
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const InvalidArgument& e) {
        throw ConfigError(path + ": " + e.what());
    }
    throw ConfigError(join(path, "type") + " must be 'constant', 'linear', 'threshold' or 'tree'");
}

RunConfig parse_config(const json& j, const fs::path& base_dir, const Overrides& ov) {
    require_object(j, "config",
                   {"input", "output", "columns", "bounds", "neighborhood", "coupling", "estimators", "rule", "rules",
                    "policy_class", "per_rule_table", "seed", "threads", "oracle_check", "generate"});
    RunConfig c;
    c.base_dir = base_dir;
    auto resolve = [&](const std::string& s) { return fs::path(s).is_absolute() ? fs::path(s) : base_dir / s; };
    if (const json* f = field(j, "input")) c.input = resolve(as_string(*f, "input"));
    if (const json* f = field(j, "output")) c.output = resolve(as_string(*f, "output"));
    if (const json* f = field(j, "columns")) {
        require_object(*f, "columns", {"y", "d", "x", "z", "c", "weight"});
        if (const json* y = field(*f, "y")) c.columns.y = as_string(*y, "columns.y");
        if (const json* d = field(*f, "d")) c.columns.d = as_string(*d, "columns.d");
        const json& x = need(*f, "x", "columns");
        for (std::size_t i = 0; i < as_array(x, "columns.x").size(); ++i)
            c.columns.x.push_back(as_string(x[i], index_path("columns.x", i)));
        if (const json* z = field(*f, "z")) c.columns.z = as_string(*z, "columns.z");
        if (const json* g = field(*f, "c")) c.columns.c = as_string(*g, "columns.c");
        if (const json* w = field(*f, "weight")) c.columns.weight = as_string(*w, "columns.weight");
    }
    if (const json* f = field(j, "bounds")) c.bounds = parse_bounds(*f);
    if (const json* f = field(j, "neighborhood")) parse_neighborhood(*f, c);
    if (const json* f = field(j, "coupling")) c.coupling = parse_coupling(*f);
    if (const json* f = field(j, "estimators")) parse_estimators(*f, c.estimators);
    if (const json* f = field(j, "rule")) c.rule = *f;
    if (const json* f = field(j, "rules")) c.rules = *f;
    if (const json* f = field(j, "policy_class")) c.policy_class = *f;
    if (const json* f = field(j, "oracle_check")) c.oracle_check = *f;
    if (const json* f = field(j, "generate")) c.generate = *f;
    if (const json* f = field(j, "per_rule_table")) c.per_rule_table = as_bool(*f, "per_rule_table");
    if (const json* f = field(j, "seed")) {
        if (!f->is_number_unsigned()) throw ConfigError("seed must be a non-negative integer");
        c.seed = f->get<std::uint64_t>();
    }
    if (const json* f = field(j, "threads")) c.threads = static_cast<unsigned>(as_index(*f, "threads"));

    if (ov.input) c.input = fs::path(*ov.input);
    if (ov.output) c.output = fs::path(*ov.output);
    if (ov.epsilon) c.neighborhood.epsilon = *ov.epsilon;
    if (ov.seed) c.seed = *ov.seed;
    if (ov.threads) c.threads = *ov.threads;
    try {
        c.neighborhood.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("neighborhood: ") + e.what());
    }
    return c;
}

void write_atomically(const fs::path& path, const std::string& content) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw ConfigError("cannot write output file " + path.string());
        f << content;
        f.flush();
        if (!f) throw ConfigError("failed while writing " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw ConfigError("cannot move output into place at " + path.string());
    }
}

std::string format_curve_csv(const std::vector<CurveRow>& rows) {
    std::string s = "rule_id,epsilon,value,rule\n";
    for (const auto& r : rows) {
        s += std::to_string(r.rule_id) + "," + extval::detail::format_double(r.epsilon) + "," +
             extval::detail::format_double(r.value) + ",";
        if (r.rule.find_first_of(",\"") == std::string::npos) {
            s += r.rule;
        } else {
            s += '"';
            for (char ch : r.rule) s += ch == '"' ? std::string("\"\"") : std::string(1, ch);
            s += '"';
        }
        s += "\n";
    }
    return s;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App cli{"Externally valid policy evaluation and choice under distribution shift", "extval"};
    std::string command, config_path;
    Overrides ov;
    cli.add_option("command", command, "evaluate | search | curve | oracle-check | generate")
        ->required()
        ->check(CLI::IsMember({"evaluate", "search", "curve", "oracle-check", "generate"}));
    cli.add_option("--config", config_path, "JSON configuration file")->required();
    cli.add_option("--input", ov.input, "Input CSV (overrides the configuration)");
    cli.add_option("--output", ov.output, "Output file (overrides the configuration; default stdout)");
    cli.add_option("--epsilon", ov.epsilon, "Neighborhood radius (overrides the configuration)");
    cli.add_option("--seed", ov.seed, "Seed for sampling and data generation");
    cli.add_option("--threads", ov.threads, "Worker threads; 0 uses every core");

    std::vector<const char*> argv{"extval"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        cli.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << cli.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    }

    try {
        std::ifstream f(config_path, std::ios::binary);
        if (!f) throw ConfigError("cannot open config file " + config_path);
        json j;
        try {
            j = json::parse(f);
        } catch (const json::parse_error& e) {
            throw ConfigError(config_path + ": " + e.what());
        }
        const auto base = fs::path(config_path).parent_path();
        const RunConfig c = parse_config(j, base.empty() ? fs::path(".") : base, ov);
        if (command == "evaluate") return cmd_evaluate(c, out, err);
        if (command == "search") return cmd_search(c, out, err);
        if (command == "curve") return cmd_curve(c, out, err);
        if (command == "oracle-check") return cmd_oracle_check(c, out, err);
        return cmd_generate(c, out, err);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const CheckFailed& e) {
        err << "check failed: " << e.what() << "\n";
        return kExitDuality;
    } catch (const json::exception& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return kExitInternal;
    }
}

} // namespace extval::app
