#pragma once

// The six reproduction commands. Each reads its [section] of the config,
// writes CSV/JSON artifacts plus manifest.json into the output directory and
// returns a process exit code.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "strainflow/bounds.hpp"
#include "strainflow/cli/config.hpp"
#include "strainflow/cli/manifest.hpp"
#include "strainflow/fields.hpp"
#include "strainflow/gradcheck.hpp"
#include "strainflow/integrate.hpp"
#include "strainflow/metrics.hpp"
#include "strainflow/network.hpp"
#include "strainflow/train.hpp"

namespace strainflow::cli {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

enum ExitCode : int {
    kExitOk = 0,
    kExitPredicateFailed = 1,
    kExitUsage = 2,
    kExitRuntime = 3,
};

struct RunOptions {
    fs::path config;
    std::optional<fs::path> out_dir;
    std::optional<std::uint64_t> seed;
    std::ostream* log = &std::cerr;
};

/// Shared state for one command invocation.
struct Context {
    const Config& cfg;
    RunManifest& manifest;
    std::uint64_t seed;
    std::ostream& log;

    /// Called once a command has read all of its configuration.
    void config_complete() const { cfg.reject_unknown(); }
};

inline std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

/// Row-oriented CSV builder with a fixed header.
class Csv {
public:
    explicit Csv(std::string header) : body_(std::move(header) + "\n") {}
    template <typename... Cells>
    void row(const Cells&... cells) {
        std::string line;
        ((line += (line.empty() ? "" : ",") + cell(cells)), ...);
        body_ += line + "\n";
    }
    const std::string& str() const noexcept { return body_; }

private:
    static std::string cell(double v) { return fmt(v); }
    static std::string cell(std::size_t v) { return std::to_string(v); }
    static std::string cell(int v) { return std::to_string(v); }
    static std::string cell(const std::string& s) { return s; }
    static std::string cell(const char* s) { return s; }
    std::string body_;
};

inline json to_json(const FlowConstants& c) {
    return json{{"mu_plus", c.mu_plus}, {"mu_sup", c.mu_sup}, {"M_t", c.M_t},     {"M_S", c.M_S},
                {"M_Omega", c.M_Omega}, {"L", c.L},           {"T", c.T},         {"sample_count", c.sample_count}};
}

inline json to_json(const BoundReport& r) {
    return json{{"N", r.N},
                {"h", r.h},
                {"constants", to_json(r.constants)},
                {"bound_general", r.bound_general},
                {"bound_regime_A", r.bound_regime_A},
                {"bound_regime_B", r.bound_regime_B},
                {"bound_regime_C", r.bound_regime_C},
                {"empirical_error", r.empirical_error},
                {"empirical_max_error", r.empirical_max_error},
                {"safety_margin", r.margin},
                {"analytic_reference", r.analytic_reference},
                {"asserted", r.asserted},
                {"within_bound", r.within_bound},
                {"regimes_ordered", r.regimes_ordered},
                {"passed", r.passed()}};
}

inline json to_json(const GradcheckReport& r) {
    return json{{"max_rel_error", r.max_rel_error}, {"worst_index", r.worst_index}, {"worst_analytic", r.worst_analytic},
                {"worst_numeric", r.worst_numeric}, {"checked", r.checked},         {"tolerance", r.tolerance},
                {"passed", r.passed}};
}

inline std::string convergence_csv(const ConvergenceSeries& s) {
    Csv csv("N,h,mean_error,max_error");
    for (std::size_t i = 0; i < s.N.size(); ++i) csv.row(s.N[i], s.h[i], s.mean_error[i], s.max_error[i]);
    return csv.str();
}

inline json slope_json(const std::string& name, const ConvergenceSeries& s) {
    json j{{"name", name}, {"exact", s.exact}, {"points_fitted", s.points_fitted}};
    if (s.exact) {
        j["slope"] = "exact";
    } else {
        j["slope"] = s.slope;
        j["intercept"] = s.intercept;
    }
    double worst = 0.0;
    for (double e : s.mean_error) worst = std::max(worst, e);
    j["max_mean_error"] = worst;
    return j;
}

/// Training hyperparameters from a section; defaults match TrainConfig.
inline TrainConfig read_train_config(const Section& s, std::uint64_t seed) {
    TrainConfig c;
    c.alpha = s.get_double("alpha", c.alpha);
    c.beta = s.get_double("beta", c.beta);
    c.lr = s.get_double("lr", c.lr);
    c.batch = s.get_count("batch", c.batch);
    c.epochs = s.get_count("epochs", c.epochs);
    c.sigma_min = s.get_double("sigma_min", c.sigma_min);
    c.reg_mode = parse_reg_mode(s.get_string("reg_mode", to_string(c.reg_mode)));
    c.probes = s.get_count("probes", c.probes);
    c.model_kind = parse_model_kind(s.get_string("model_kind", to_string(c.model_kind)));
    c.log_every = s.get_count("log_every", c.log_every);
    c.hidden = s.get_count("hidden", c.hidden);
    c.depth = s.get_count("depth", c.depth);
    c.fd_step = s.get_double("fd_step", c.fd_step);
    c.eval_samples = s.get_count("eval_samples", c.eval_samples);
    c.seed = seed;
    c.validate();
    return c;
}

inline json to_json(const TrainConfig& c) {
    return json{{"alpha", c.alpha},         {"beta", c.beta},         {"lr", c.lr},
                {"batch", c.batch},         {"epochs", c.epochs},     {"seed", c.seed},
                {"sigma_min", c.sigma_min}, {"reg_mode", to_string(c.reg_mode)}, {"probes", c.probes},
                {"model_kind", to_string(c.model_kind)}, {"log_every", c.log_every}, {"hidden", c.hidden},
                {"depth", c.depth},         {"fd_step", c.fd_step},   {"eval_samples", c.eval_samples}};
}

inline std::string train_log_csv(const TrainLog& log) {
    Csv csv("epoch,fm_loss,strain_sq,vort_sq,reg_total");
    for (const LogRecord& r : log.records) csv.row(r.epoch, r.fm_loss, r.strain_sq, r.vort_sq, r.reg_value);
    return csv.str();
}

// ---------------------------------------------------------------------------
// verify-ot

inline int cmd_verify_ot(Context& ctx) {
    const Section& s = ctx.cfg.section("verify_ot");
    const auto gaussian_dims = s.get_counts("gaussian_dims", {2, 10});
    const auto quartic_dims = s.get_counts("quartic_dims", {2, 5});
    const auto quartic_eps = s.get_doubles("quartic_eps", {0.3, 0.5});
    const double gamma = s.get_double("gamma", 0.5);
    const auto n_list = s.get_counts("n_list", {2, 4, 8, 16, 32, 64});
    const std::size_t samples = s.get_count("samples", 256);
    const double gaussian_tol = s.get_double("gaussian_tol", 1e-10);
    const double quartic_tol = s.get_double("quartic_tol", 1e-8);
    const double slope_min = s.get_double("slope_min", 0.8);
    const double slope_max = s.get_double("slope_max", 1.2);
    const bool controls = s.get_bool("controls", true);
    const std::size_t control_steps = s.get_count("control_steps", 1000);
    ctx.config_complete();

    json studies = json::array();
    std::vector<std::string> failures;

    auto run_pair = [&](const std::string& name, const std::shared_ptr<const OTVelocityField>& field, double tol) {
        const std::vector<Vec> x0s = sample_gaussian(field->dimension(), samples, ctx.seed, rng::Stream::eval);
        const ConvergenceSeries ot = convergence_study(*field, x0s, n_list, exact_ot_oracle(*field));
        ctx.manifest.emit("convergence_" + name + ".csv", convergence_csv(ot));
        json j = slope_json(name, ot);
        bool ok = true;
        for (double e : ot.mean_error) ok = ok && e <= tol;
        j["kind"] = "ot";
        j["tolerance"] = tol;
        j["passed"] = ok;
        studies.push_back(j);
        if (!ok) failures.push_back(name);
        ctx.log << name << ": " << (ot.exact ? "exact" : "slope " + fmt(ot.slope)) << (ok ? "" : "  FAILED") << "\n";

        if (!controls) return;
        const std::string cname = name + "_control";
        const auto control = perturbed_field({gamma, field});
        const EndpointOracle oracle = gamma == 0.0 ? exact_ot_oracle(*field) : rk4_oracle(*control, control_steps);
        const ConvergenceSeries cs = convergence_study(*control, x0s, n_list, oracle);
        ctx.manifest.emit("convergence_" + cname + ".csv", convergence_csv(cs));
        json cj = slope_json(cname, cs);
        bool cok;
        if (gamma == 0.0) {
            cok = true;
            for (double e : cs.mean_error) cok = cok && e <= tol;
        } else {
            cok = !cs.exact && cs.slope >= slope_min && cs.slope <= slope_max;
        }
        cj["kind"] = "control";
        cj["gamma"] = gamma;
        cj["slope_range"] = {slope_min, slope_max};
        cj["passed"] = cok;
        studies.push_back(cj);
        if (!cok) failures.push_back(cname);
        ctx.log << cname << ": " << (cs.exact ? "exact" : "slope " + fmt(cs.slope)) << (cok ? "" : "  FAILED") << "\n";
    };

    for (std::size_t d : gaussian_dims) run_pair("gaussian_d" + std::to_string(d), gaussian_ot_field(random_gaussian_ot_spec(d, ctx.seed)), gaussian_tol);
    for (std::size_t d : quartic_dims)
        for (double eps : quartic_eps)
            run_pair("quartic_d" + std::to_string(d) + "_eps" + fmt(eps), quartic_ot_field({eps, d}), quartic_tol);

    json summary{{"error_metric", "mean Euclidean endpoint distance"},
                 {"error_floor", kErrorFloor},
                 {"studies", studies},
                 {"failures", failures}};
    ctx.manifest.emit("slopes.json", summary.dump(2) + "\n");
    for (const auto& f : failures) ctx.log << "failing study: " << f << "\n";
    return failures.empty() ? kExitOk : kExitPredicateFailed;
}

// ---------------------------------------------------------------------------
// train

inline int cmd_train(Context& ctx) {
    const Section& s = ctx.cfg.section("train");
    const TrainConfig cfg = read_train_config(s, ctx.seed);
    const std::string ckpt_name = s.get_string("checkpoint", "model.ckpt");
    ctx.config_complete();

    ctx.log << "training " << to_string(cfg.model_kind) << " alpha=" << cfg.alpha << " beta=" << cfg.beta << " epochs=" << cfg.epochs
            << "\n";
    const TrainResult r = train(cfg, [&](const LogRecord& rec) {
        ctx.log << "epoch " << rec.epoch << " fm " << fmt(rec.fm_loss) << " strain " << fmt(rec.strain_sq) << " vort "
                << fmt(rec.vort_sq) << "\n";
    });
    ctx.manifest.emit("train.csv", train_log_csv(r.log));
    json summary{{"config", to_json(cfg)}, {"ok", r.ok()}};
    if (!r.ok()) {
        summary["failure"] = *r.log.failure;
        ctx.manifest.emit("train_summary.json", summary.dump(2) + "\n");
        ctx.log << "training failed: " << *r.log.failure << "\n";
        return kExitRuntime;
    }
    ctx.manifest.emit(ckpt_name, checkpoint_bytes(r.model));
    summary["final"] = {{"fm_loss", r.final.fm_loss}, {"strain_sq", r.final.strain_sq}, {"vort_sq", r.final.vort_sq},
                        {"eval_samples", cfg.eval_samples}};
    summary["checkpoint"] = ckpt_name;
    ctx.manifest.emit("train_summary.json", summary.dump(2) + "\n");
    return kExitOk;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepRow {
    double alpha = 0.0;
    double beta = 0.0;
    bool ok = false;
    std::string failure;
    double fm_loss = NAN;
    double strain_sq = NAN;
    double l2_at_5 = NAN;
    double l2_at_10 = NAN;
    double straightness = NAN;
};

/// Final metrics of a trained 2D model: L2@5 and L2@10 against the N = 500
/// reference, straightness of the N = 500 paths.
struct TrajectoryMetrics {
    double l2_at_5 = 0.0;
    double l2_at_10 = 0.0;
    double straightness = 0.0;
};

inline TrajectoryMetrics trajectory_metrics(const VelocityField& field, std::span<const Vec> x0s) {
    const std::vector<Trajectory> trs = euler_trajectories(field, x0s, kReferenceSteps);
    std::vector<Vec> ref;
    ref.reserve(trs.size());
    for (const Trajectory& tr : trs) ref.push_back(tr.endpoint());
    return {l2_at_k(field, x0s, 5, ref), l2_at_k(field, x0s, 10, ref), straightness(trs)};
}

inline int cmd_sweep(Context& ctx) {
    const Section& s = ctx.cfg.section("sweep");
    const auto alphas = s.get_doubles("alphas", {0.0, 0.1, 0.3, 1.0});
    const auto betas = s.get_doubles("betas", {0.0});
    const std::size_t samples = s.get_count("samples", 1024);
    const bool save_models = s.get_bool("save_checkpoints", true);
    const TrainConfig base = read_train_config(ctx.cfg.section("train"), ctx.seed);
    ctx.config_complete();
    if (alphas.empty()) throw ConfigError("[sweep] alphas must not be empty");
    if (betas.size() != 1 && betas.size() != alphas.size()) throw ConfigError("[sweep] betas must have one entry or one per alpha");

    const std::vector<Vec> x0s = sample_gaussian(2, samples, ctx.seed, rng::Stream::eval);
    std::vector<SweepRow> rows;
    for (std::size_t i = 0; i < alphas.size(); ++i) {
        TrainConfig cfg = base;
        cfg.alpha = alphas[i];
        cfg.beta = betas.size() == 1 ? betas[0] : betas[i];
        SweepRow row;
        row.alpha = cfg.alpha;
        row.beta = cfg.beta;
        ctx.log << "sweep row " << i << ": alpha=" << cfg.alpha << " beta=" << cfg.beta << "\n";
        try {
            cfg.validate();
            const TrainResult r = train(cfg);
            if (!r.ok()) throw NumericError(*r.log.failure);
            const NetworkField field(r.model);
            const TrajectoryMetrics tm = trajectory_metrics(field, x0s);
            row = {cfg.alpha, cfg.beta, true, "", r.final.fm_loss, r.final.strain_sq, tm.l2_at_5, tm.l2_at_10, tm.straightness};
            if (save_models) ctx.manifest.emit("model_" + std::to_string(i) + ".ckpt", checkpoint_bytes(r.model));
        } catch (const std::exception& e) {
            row.failure = e.what();
            ctx.log << "  row failed: " << e.what() << "\n";
        }
        rows.push_back(row);
    }

    Csv csv("alpha,fm_loss,strain_sq,l2_at_5,l2_at_10,straightness");
    for (const SweepRow& r : rows) csv.row(r.alpha, r.fm_loss, r.strain_sq, r.l2_at_5, r.l2_at_10, r.straightness);
    ctx.manifest.emit("sweep.csv", csv.str());

    auto trend = [&](auto field, auto cmp) {
        for (std::size_t i = 1; i < rows.size(); ++i)
            if (!rows[i - 1].ok || !rows[i].ok || !cmp(rows[i].*field, rows[i - 1].*field)) return false;
        return rows.size() > 1 && rows[0].ok;
    };
    const auto lt = [](double a, double b) { return a < b; };
    const auto ge = [](double a, double b) { return a >= b; };
    json row_json = json::array();
    bool all_ok = true;
    for (const SweepRow& r : rows) {
        json j{{"alpha", r.alpha}, {"beta", r.beta}, {"ok", r.ok}};
        if (!r.ok) j["failure"] = r.failure;
        row_json.push_back(j);
        all_ok = all_ok && r.ok;
    }
    json summary{{"rows", row_json},
                 {"metric_notes",
                  {{"l2", "mean Euclidean distance to the N=500 Euler endpoint"},
                   {"straightness", "chord / path length of N=500 Euler paths, mean over samples"},
                   {"fm_loss_and_strain", "fixed evaluation batch after training"}}},
                 {"samples", samples},
                 {"trends",
                  {{"strain_sq_strictly_decreasing", trend(&SweepRow::strain_sq, lt)},
                   {"l2_at_5_strictly_decreasing", trend(&SweepRow::l2_at_5, lt)},
                   {"fm_loss_non_decreasing", trend(&SweepRow::fm_loss, ge)},
                   {"straightness_non_decreasing", trend(&SweepRow::straightness, ge)}}}};
    ctx.manifest.emit("sweep_summary.json", summary.dump(2) + "\n");
    return all_ok ? kExitOk : kExitPredicateFailed;
}

// ---------------------------------------------------------------------------
// nfe-compare

inline int cmd_nfe_compare(Context& ctx) {
    const Section& s = ctx.cfg.section("nfe_compare");
    const auto paths = s.get_strings("checkpoints", {});
    auto labels = s.get_strings("labels", {});
    const auto nfes = s.get_counts("nfes", {5, 10, 20, 50, 100});
    const std::size_t samples = s.get_count("samples", 1024);
    const std::size_t projections = s.get_count("projections", kDefaultProjections);
    const std::size_t match_nfe = s.get_count("match_nfe", 20);
    std::string baseline = s.get_string("baseline", "");
    ctx.config_complete();
    if (paths.empty()) throw ConfigError("[nfe_compare] checkpoints must list at least one file");
    if (labels.empty())
        for (std::size_t i = 0; i < paths.size(); ++i) labels.push_back("model" + std::to_string(i));
    if (labels.size() != paths.size()) throw ConfigError("[nfe_compare] labels and checkpoints differ in length");
    if (baseline.empty()) baseline = labels[0];

    std::vector<Model> models;
    for (const std::string& p : paths) {
        const fs::path full = ctx.cfg.resolve(p);
        if (!fs::exists(full)) {
            ctx.log << "missing checkpoint: " << full.string() << "\n";
            return kExitRuntime;
        }
        models.push_back(load_checkpoint(full));
    }

    std::map<std::string, std::vector<MetricRow>> all;
    json models_json = json::array();
    for (std::size_t m = 0; m < models.size(); ++m) {
        const NetworkField field(models[m]);
        const std::size_t d = field.dimension();
        const std::vector<Vec> x0s = sample_gaussian(d, samples, ctx.seed, rng::Stream::eval);
        const std::vector<Vec> ref = euler_batch(field, x0s, kReferenceSteps);
        const std::vector<Vec> target =
            d == 2 ? unpack_points(pinwheel_matrix(samples, rng::CounterRng(ctx.seed, rng::Stream::eval, 1))) : ref;
        const auto rows = metric_rows(field, x0s, nfes, ref, target, projections, ctx.seed);
        Csv csv("nfe,l2,sw,straightness");
        for (const MetricRow& r : rows) csv.row(r.nfe, r.l2, r.sw, r.straightness);
        ctx.manifest.emit("metrics_" + labels[m] + ".csv", csv.str());
        bool decreasing = true;
        for (std::size_t i = 1; i < rows.size(); ++i) decreasing = decreasing && rows[i].l2 < rows[i - 1].l2;
        models_json.push_back({{"label", labels[m]}, {"checkpoint", paths[m]}, {"l2_decreasing_in_nfe", decreasing}});
        all[labels[m]] = rows;
    }

    json matching = json::object();
    const auto base_it = all.find(baseline);
    if (base_it == all.end()) throw ConfigError("[nfe_compare] baseline label '" + baseline + "' is not a model label");
    std::optional<double> base_l2;
    for (const MetricRow& r : base_it->second)
        if (r.nfe == match_nfe) base_l2 = r.l2;
    if (base_l2) {
        for (const auto& [label, rows] : all) {
            if (label == baseline) continue;
            json entry = nullptr;
            for (const MetricRow& r : rows)
                if (r.l2 <= *base_l2) {
                    entry = r.nfe;
                    break;
                }
            matching[label] = entry;
        }
    }
    json summary{{"baseline", baseline},
                 {"match_nfe", match_nfe},
                 {"baseline_l2_at_match_nfe", base_l2 ? json(*base_l2) : json(nullptr)},
                 {"smallest_nfe_matching_baseline", matching},
                 {"models", models_json},
                 {"metric_notes",
                  {{"l2", "mean Euclidean distance to the N=500 Euler endpoint"},
                   {"sw", "sliced 2-Wasserstein vs. held-out pinwheel samples (d=2) or the reference endpoints"},
                   {"straightness", "chord / path length of the Euler path at that NFE"}}}};
    ctx.manifest.emit("nfe_summary.json", summary.dump(2) + "\n");
    return kExitOk;
}

// ---------------------------------------------------------------------------
// bounds

/// Parses "a b; c d" into a square matrix.
inline Mat parse_matrix(const std::string& text) {
    std::vector<std::vector<double>> rows;
    for (const std::string& r : detail::split(text, ';')) {
        std::vector<double> row;
        std::istringstream in(r);
        std::string item;
        while (in >> item) row.push_back(detail::parse_number<double>(item, "matrix"));
        rows.push_back(row);
    }
    if (rows.empty()) throw ConfigError("matrix: empty");
    Mat m(rows.size(), rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows.size()) throw ConfigError("matrix: must be square");
        for (std::size_t j = 0; j < rows.size(); ++j) m(i, j) = rows[i][j];
    }
    return m;
}

inline int cmd_bounds(Context& ctx) {
    const Section& s = ctx.cfg.section("bounds");
    const std::string kind = s.get_string("field", "gaussian");
    const std::size_t dim = s.get_count("dim", 2);
    const double eps = s.get_double("eps", 0.3);
    const double gamma = s.get_double("gamma", 0.5);
    const std::string matrix = s.get_string("matrix", "");
    const std::string checkpoint = s.get_string("checkpoint", "");
    const auto n_list = s.get_counts("n_list", {16, 32, 64});
    const std::size_t samples = s.get_count("samples", 256);
    const std::size_t grid_n = s.get_count("grid_n", kDefaultConstantGrid);
    const std::size_t reference_steps = s.get_count("reference_steps", 2000);
    ctx.config_complete();

    FieldPtr field;
    std::optional<EndpointOracle> oracle;
    if (kind == "gaussian") {
        field = gaussian_ot_field(random_gaussian_ot_spec(dim, ctx.seed));
    } else if (kind == "quartic") {
        field = quartic_ot_field({eps, dim});
    } else if (kind == "perturbed") {
        field = perturbed_field({gamma, gaussian_ot_field(random_gaussian_ot_spec(dim, ctx.seed))});
        oracle = rk4_oracle(*field, reference_steps);
    } else if (kind == "linear") {
        if (matrix.empty()) throw ConfigError("[bounds] field = linear needs a matrix");
        field = std::make_shared<LinearField>(parse_matrix(matrix));
        oracle = rk4_oracle(*field, reference_steps);
    } else if (kind == "checkpoint") {
        if (checkpoint.empty()) throw ConfigError("[bounds] field = checkpoint needs a checkpoint path");
        const fs::path p = ctx.cfg.resolve(checkpoint);
        if (!fs::exists(p)) {
            ctx.log << "missing checkpoint: " << p.string() << "\n";
            return kExitRuntime;
        }
        field = std::make_shared<NetworkField>(load_checkpoint(p));
    } else {
        throw ConfigError("[bounds] unknown field kind '" + kind + "'");
    }

    const std::vector<Vec> x0s = sample_gaussian(field->dimension(), samples, ctx.seed, rng::Stream::eval);
    const FlowConstants constants = estimate_flow_constants(*field, x0s, grid_n);
    VerifyOptions opt;
    opt.grid_N = grid_n;
    opt.oracle = oracle;
    opt.constants = constants;
    json reports = json::array();
    bool ok = true;
    for (std::size_t N : n_list) {
        BoundReport r = verify_bound(*field, x0s, N, opt);
        // Constants were sampled, not derived in closed form.
        r.margin = kSampledConstantMargin;
        r.within_bound = r.empirical_error <= r.margin * r.bound_general + kErrorFloor;
        r.analytic_reference = oracle.has_value() || dynamic_cast<const OTVelocityField*>(field.get()) != nullptr;
        ok = ok && r.passed();
        reports.push_back(to_json(r));
        ctx.log << "N=" << N << " empirical " << fmt(r.empirical_error) << " bound " << fmt(r.bound_general)
                << (r.passed() ? "" : "  FAILED") << "\n";
    }
    json out{{"field", kind},
             {"samples", samples},
             {"grid_n", grid_n},
             {"min_asserted_N", kMinAssertedSteps},
             {"safety_margin_policy", "sampled constants: empirical <= margin * bound_general"},
             {"reference", oracle ? "rk4 N=" + std::to_string(reference_steps)
                                  : (dynamic_cast<const OTVelocityField*>(field.get()) ? "exact transport map" : "euler N=500")},
             {"reports", reports},
             {"passed", ok}};
    ctx.manifest.emit("bounds.json", out.dump(2) + "\n");
    return ok ? kExitOk : kExitPredicateFailed;
}

// ---------------------------------------------------------------------------
// gradcheck

/// Weighted strain/vorticity penalty of `model` on (x, t), with gradient.
inline double penalty_loss(const Model& model, const Matrix& x, const Eigen::RowVectorXd& t, double alpha, double beta,
                           RegMode mode, std::uint64_t seed, std::vector<double>* grad) {
    ad::Tape tape;
    const NetworkVars net = bind_parameters(tape, model.params, grad != nullptr);
    ad::Var strain, vort;
    if (mode == RegMode::exact) {
        const VelocityGraph g = velocity_graph(tape, net, model.kind, model.dim(), x, t, true);
        const PenaltyVars p = penalty_exact(g);
        strain = p.strain_sq;
        vort = p.vort_sq;
    } else {
        const HutchinsonVars h =
            penalty_hutchinson(tape, net, model.kind, x, t, 2, 1e-4, rng::CounterRng(seed, rng::Stream::probes), true);
        strain = h.strain_sq;
        vort = h.vort_sq;
    }
    const ad::Var loss = ad::add(ad::scale(strain, alpha), ad::scale(vort, beta));
    if (grad) {
        tape.backward(loss);
        *grad = collect_gradient(tape, net, model.params);
    }
    return loss.scalar();
}

inline int cmd_gradcheck(Context& ctx) {
    const Section& s = ctx.cfg.section("gradcheck");
    const std::size_t batch = s.get_count("batch", 16);
    const std::size_t hidden = s.get_count("hidden", 32);
    const std::size_t depth = s.get_count("depth", 3);
    const std::size_t coords = s.get_count("coords", 64);
    const double tol = s.get_double("tol", 1e-3);
    const double alpha = s.get_double("alpha", 1.0);
    const double beta = s.get_double("beta", 0.5);
    const auto kinds = s.get_strings("models", {"mlp", "potential"});
    const auto modes = s.get_strings("modes", {"exact", "hutchinson"});
    ctx.config_complete();

    const Batch data = sample_batch(batch, ctx.seed, 0);
    json results = json::array();
    bool ok = true;
    for (const std::string& kind_name : kinds) {
        const ModelKind kind = parse_model_kind(kind_name);
        Model model = make_model(kind, ctx.seed, 2, hidden, depth);
        auto with_params = [&model](std::span<const double> p) {
            Model m = model;
            m.params.values.assign(p.begin(), p.end());
            return m;
        };
        TrainConfig fm_cfg;
        fm_cfg.model_kind = kind;
        const LossFn fm = [&](std::span<const double> p, std::vector<double>* g) {
            return objective_and_gradient(with_params(p), fm_cfg, data, 0, g);
        };
        const GradcheckReport fr = gradcheck(model.params.values, fm, tol, ctx.seed, coords);
        results.push_back({{"model", kind_name}, {"loss", "fm"}, {"report", to_json(fr)}});
        ok = ok && fr.passed;
        ctx.log << kind_name << " fm: max rel error " << fmt(fr.max_rel_error) << (fr.passed ? "" : "  FAILED") << "\n";

        const Matrix xt = data.xt(0.0);
        for (const std::string& mode_name : modes) {
            const RegMode mode = parse_reg_mode(mode_name);
            const LossFn pen = [&](std::span<const double> p, std::vector<double>* g) {
                return penalty_loss(with_params(p), xt, data.t, alpha, beta, mode, ctx.seed, g);
            };
            const GradcheckReport pr = gradcheck(model.params.values, pen, tol, ctx.seed, coords);
            results.push_back({{"model", kind_name}, {"loss", "penalty_" + mode_name}, {"report", to_json(pr)}});
            ok = ok && pr.passed;
            ctx.log << kind_name << " penalty (" << mode_name << "): max rel error " << fmt(pr.max_rel_error)
                    << (pr.passed ? "" : "  FAILED") << "\n";
        }
    }
    json out{{"alpha", alpha}, {"beta", beta}, {"batch", batch}, {"results", results}, {"passed", ok}};
    ctx.manifest.emit("gradcheck.json", out.dump(2) + "\n");
    return ok ? kExitOk : kExitPredicateFailed;
}

// ---------------------------------------------------------------------------

inline const std::map<std::string, std::function<int(Context&)>>& command_table() {
    static const std::map<std::string, std::function<int(Context&)>> table{
        {"verify-ot", cmd_verify_ot}, {"train", cmd_train},   {"sweep", cmd_sweep},
        {"nfe-compare", cmd_nfe_compare}, {"bounds", cmd_bounds}, {"gradcheck", cmd_gradcheck},
    };
    return table;
}

/// Loads the config, applies overrides, runs the command and writes the manifest.
inline int run_command(const std::string& name, const RunOptions& opts) {
    std::ostream& log = *opts.log;
    const auto& table = command_table();
    const auto it = table.find(name);
    if (it == table.end()) {
        log << "unknown command '" << name << "'\n";
        return kExitUsage;
    }
    try {
        const Config cfg = Config::load(opts.config);
        const Section& global = cfg.section("global");
        const std::int64_t cfg_seed = global.get_int("seed", 0);
        const std::string out_cfg = global.get_string("out_dir", "out");
        const std::string precision = global.get_string("precision", "float64");
        if (precision != "float64") throw ConfigError("[global] precision: only float64 is supported");
        if (cfg_seed < 0) throw ConfigError("[global] seed must be non-negative");
        const std::uint64_t seed = opts.seed ? *opts.seed : static_cast<std::uint64_t>(cfg_seed);
        const fs::path out_dir = opts.out_dir ? *opts.out_dir : cfg.resolve(out_cfg);
        fs::create_directories(out_dir);

        RunManifest manifest(name, out_dir, seed);
        manifest.set_config(cfg);
        Context ctx{cfg, manifest, seed, log};
        int code;
        try {
            code = it->second(ctx);
        } catch (const ConfigError&) {
            throw;
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        } catch (const std::exception& e) {
            log << name << ": " << e.what() << "\n";
            code = kExitRuntime;
        }
        manifest.write(code);
        return code;
    } catch (const ConfigError& e) {
        log << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        log << name << ": " << e.what() << "\n";
        return kExitRuntime;
    }
}

}  // namespace strainflow::cli
