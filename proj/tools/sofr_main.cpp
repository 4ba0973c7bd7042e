// Command-line front end: fit estimators on CSV datasets, run the simulation
// benchmark, and generate example datasets.

#include <CLI11.hpp>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "sofr/io.hpp"

namespace {

using namespace sofr;

constexpr int kExitNumerical = 1;
constexpr int kExitConfig = 2;

std::set<Method> parse_methods(const std::vector<std::string>& names, bool allow_local) {
    std::set<Method> out;
    for (const auto& name : names) {
        if (name == "all") {
            out.insert({Method::otl, Method::aotl, Method::cvs, Method::pcvs});
            if (allow_local) out.insert(Method::local);
            continue;
        }
        if (name == "local" && allow_local) {
            out.insert(Method::local);
        } else if (name == "otl") {
            out.insert(Method::otl);
        } else if (name == "aotl") {
            out.insert(Method::aotl);
        } else if (name == "cvs") {
            out.insert(Method::cvs);
        } else if (name == "pcvs") {
            out.insert(Method::pcvs);
        } else {
            throw ConfigError("unknown method '" + name + "'");
        }
    }
    return out;
}

std::string tunable_str(const std::optional<double>& v, const char* sentinel) {
    return v ? format_double(*v) : sentinel;
}

void check_dataset_files(const std::string& prefix) {
    for (const char* suffix : {".z.csv", ".y.csv"}) {
        std::string path = prefix + suffix;
        if (!std::filesystem::exists(path)) throw ConfigError("dataset file not found: " + path);
    }
}

int cmd_fit(Config cfg) {
    std::string target_prefix = cfg.require_string("target");
    std::vector<std::string> source_prefixes = cfg.get_list("sources", "");
    std::string output = cfg.require_string("output");
    auto rho = cfg.get_tunable("rho", "gcv", std::nullopt, 0.0, 1e12);
    auto lambda = cfg.get_tunable("lambda", "cv", std::nullopt, 0.0, 1e12);
    auto zeta = cfg.get_tunable("zeta", "path", std::nullopt, 0.0, 1e12);
    double alpha = cfg.get_double("alpha", 0.05, 1e-12, 1.0 - 1e-12);
    std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_long("seed", 1, 0, LONG_MAX));
    std::string variance_mode = cfg.get_string("variance_mode", "homoskedastic");
    std::set<Method> methods = parse_methods(cfg.get_list("method", "all"), true);
    bool center = cfg.get_flag("center", true);
    long m_override = cfg.get_long("m", 0, 0, 1 << 20);
    cfg.reject_unknown_keys();

    if (variance_mode != "homoskedastic" && variance_mode != "hc")
        throw ConfigError("variance_mode must be homoskedastic or hc");
    bool needs_sources = methods.count(Method::otl) || methods.count(Method::aotl) ||
                         methods.count(Method::cvs) || methods.count(Method::pcvs);
    if (needs_sources && source_prefixes.empty())
        throw ConfigError("transfer methods need at least one entry in 'sources'");

    check_dataset_files(target_prefix);
    for (const auto& p : source_prefixes) check_dataset_files(p);

    auto target_raw = load_dataset_prefix(target_prefix);
    std::vector<std::shared_ptr<RawDataset>> source_raws;
    for (std::size_t k = 0; k < source_prefixes.size(); ++k) {
        source_raws.push_back(load_dataset_prefix(source_prefixes[k]));
        source_raws.back()->id = static_cast<int>(k + 1);
        if (source_raws.back()->grid_size() != target_raw->grid_size())
            throw ConfigError("source '" + source_prefixes[k] + "' grid size differs from target");
    }

    TuningPolicy tuning;
    tuning.rho = rho;
    tuning.lambda = lambda;
    tuning.variance_mode =
        variance_mode == "hc" ? VarianceMode::hc : VarianceMode::homoskedastic;

    int m = m_override > 0 ? static_cast<int>(m_override)
                           : default_basis_size(target_raw->grid_size());
    auto basis = fourier_basis(m);

    std::vector<std::string> notes;
    auto note_tuning = [&](const std::string& key, double value) {
        notes.push_back("resolved " + key + " = " + format_double(value));
    };

    double rho_target = tuning.resolve_rho(*target_raw, *basis);
    note_tuning("rho(target)", rho_target);
    auto sm_target = smooth(target_raw, basis, rho_target, center);
    std::vector<std::shared_ptr<const SmoothedDataset>> sm_sources;
    for (std::size_t k = 0; k < source_raws.size(); ++k) {
        double rho_k = tuning.resolve_rho(*source_raws[k], *basis);
        note_tuning("rho(source" + std::to_string(k + 1) + ")", rho_k);
        sm_sources.push_back(smooth(source_raws[k], basis, rho_k, center));
    }

    auto rng_cv = substream(seed, "cv");
    auto rng_aotl = substream(seed, "aotl-split");
    auto rng_zeta = substream(seed, "zeta-val");

    const Eigen::MatrixXd& w = basis->w;
    std::optional<LocalFit> local_fit;
    auto ensure_local = [&]() -> LocalFit& {
        if (!local_fit) {
            double lambda0 = tuning.resolve_lambda(sm_target->v, sm_target->y(), w, rng_cv);
            note_tuning("lambda(local)", lambda0);
            local_fit = fit_local(sm_target, lambda0, tuning.variance_mode);
            if (local_fit->v_jitter > 0.0)
                notes.push_back("jitter target variance block: " +
                                format_double(local_fit->v_jitter));
        }
        return *local_fit;
    };

    std::vector<LocalFit> cvs_fits;
    auto ensure_cvs_fits = [&] {
        if (!cvs_fits.empty()) return;
        cvs_fits.push_back(ensure_local());
        for (std::size_t k = 0; k < sm_sources.size(); ++k) {
            double lam = tuning.resolve_lambda(sm_sources[k]->v, sm_sources[k]->y(), w, rng_cv);
            note_tuning("lambda(source" + std::to_string(k + 1) + ")", lam);
            cvs_fits.push_back(fit_local(sm_sources[k], lam, tuning.variance_mode));
            if (cvs_fits.back().v_jitter > 0.0)
                notes.push_back("jitter source" + std::to_string(k + 1) +
                                " variance block: " + format_double(cvs_fits.back().v_jitter));
        }
    };

    std::vector<CoefEstimate> estimates;
    for (Method method : methods) {
        switch (method) {
            case Method::local:
                estimates.push_back(ensure_local().estimate());
                break;
            case Method::otl: {
                Eigen::Index total = 0;
                for (const auto& s : sm_sources) total += s->n();
                Eigen::MatrixXd feats(total, m);
                Eigen::VectorXd ys(total);
                Eigen::Index at = 0;
                for (const auto& s : sm_sources) {
                    feats.middleRows(at, s->n()) = s->v;
                    ys.segment(at, s->n()) = s->y();
                    at += s->n();
                }
                double lambda_pool = tuning.resolve_lambda(feats, ys, w, rng_cv);
                note_tuning("lambda(pool)", lambda_pool);
                CoefEstimate pooled = fit_pooled(sm_sources, lambda_pool);
                Eigen::VectorXd resid = sm_target->y() - sm_target->v * pooled.c;
                double lambda_off = tuning.resolve_lambda(sm_target->v, resid, w, rng_cv);
                note_tuning("lambda(offset)", lambda_off);
                estimates.push_back(fit_offset(pooled, sm_target, lambda_off));
                break;
            }
            case Method::aotl:
                estimates.push_back(
                    run_aotl(sm_target, sm_sources, tuning, alpha, rng_aotl, rng_cv));
                break;
            case Method::cvs: {
                ensure_cvs_fits();
                CvsSystem sys = assemble_cvs(cvs_fits);
                estimates.push_back(cvs_estimate(sys, cvs_fits[0]));
                break;
            }
            case Method::pcvs: {
                ensure_cvs_fits();
                CvsSystem sys = assemble_cvs(cvs_fits);
                Eigen::MatrixXd q = delta_precision(cvs_fits);
                double z;
                if (zeta) {
                    z = *zeta;
                } else {
                    // Penalty picked by prediction error on a held-out quarter
                    // of the target subjects, then applied at the same relative
                    // position on the full-data system.
                    std::vector<double> ratios = log_grid(1e-4, 1.0, 20);
                    std::reverse(ratios.begin(), ratios.end());
                    int n = sm_target->n();
                    std::vector<int> perm = random_permutation(n, rng_zeta);
                    int n_fit = std::min(std::max(static_cast<int>(std::lround(0.75 * n)), 2), n - 1);
                    std::vector<int> fit_idx(perm.begin(), perm.begin() + n_fit);
                    std::vector<int> val_idx(perm.begin() + n_fit, perm.end());
                    auto sm_fit = subset_subjects(*sm_target, fit_idx);
                    double lam_fit = tuning.resolve_lambda(sm_fit->v, sm_fit->y(), w, rng_cv);
                    std::vector<LocalFit> val_fits;
                    val_fits.push_back(fit_local(sm_fit, lam_fit, tuning.variance_mode));
                    for (std::size_t s = 1; s < cvs_fits.size(); ++s)
                        val_fits.push_back(cvs_fits[s]);
                    CvsSystem val_sys = assemble_cvs(val_fits);
                    Eigen::MatrixXd val_q = delta_precision(val_fits);
                    double zmax_val = zeta_max(val_q, val_sys.delta_hat, val_sys.basis_size);
                    std::vector<double> val_grid;
                    for (std::size_t i = 1; i < ratios.size(); ++i)
                        val_grid.push_back(zmax_val * ratios[i]);
                    auto path = zeta_path(val_sys, val_q, val_fits[0], val_grid);
                    std::size_t best = 0;
                    double best_sse = std::numeric_limits<double>::infinity();
                    for (std::size_t i = 0; i < path.size(); ++i) {
                        double sse = 0.0;
                        for (int vdx : val_idx) {
                            double r = sm_target->y()(vdx) -
                                       sm_target->v.row(vdx).dot(path[i].estimate.c);
                            sse += r * r;
                        }
                        if (sse < best_sse) {
                            best_sse = sse;
                            best = i;
                        }
                    }
                    double zmax_full = zeta_max(q, sys.delta_hat, sys.basis_size);
                    z = zmax_full * ratios[std::min(best, ratios.size() - 1)];
                }
                note_tuning("zeta", z);
                estimates.push_back(pcvs_estimate(sys, q, cvs_fits[0], z));
                break;
            }
        }
    }

    write_coefficients_csv(output, estimates);
    write_manifest(output + ".manifest.txt", cfg.ordered(), notes);
    std::cout << "wrote " << output << " and " << output << ".manifest.txt\n";
    return 0;
}

int cmd_bench(Config cfg) {
    SimConfig base;
    base.n = static_cast<int>(cfg.get_long("n", base.n, 5, 1000000));
    base.j = static_cast<int>(cfg.get_long("j", base.j, 2, 100000));
    base.k_sources = static_cast<int>(cfg.get_long("k_sources", base.k_sources, 1, 10000));
    base.replications = static_cast<int>(cfg.get_long("replications", base.replications, 1, 1000000));
    base.seed = static_cast<std::uint64_t>(cfg.get_long("seed", 1, 0, LONG_MAX));
    base.train_frac = cfg.get_double("train_frac", base.train_frac, 1e-6, 1.0 - 1e-6);
    base.latent_grid = static_cast<int>(cfg.get_long("latent_grid", base.latent_grid, 2, 10000000));
    base.target_scale = cfg.get_double("target_scale", base.target_scale, 1e-300, 1e300);
    base.kernel_rate = cfg.get_double("kernel_rate", base.kernel_rate, 1e-300, 1e300);
    base.noise_var_meas = cfg.get_double("noise_var_meas", base.noise_var_meas, 0.0, 1e300);
    base.noise_var_reg = cfg.get_double("noise_var_reg", base.noise_var_reg, 0.0, 1e300);
    base.alpha = cfg.get_double("alpha", base.alpha, 1e-12, 1.0 - 1e-12);
    base.tuning.rho = cfg.get_tunable("rho", "gcv", base.tuning.rho, 0.0, 1e12);
    base.tuning.lambda = cfg.get_tunable("lambda", "cv", std::nullopt, 0.0, 1e12);
    base.zeta = cfg.get_tunable("zeta", "path", std::nullopt, 0.0, 1e12);
    std::string variance_mode = cfg.get_string("variance_mode", "homoskedastic");
    std::vector<std::string> eta_strs = cfg.get_list("eta", "100");
    std::set<Method> methods = parse_methods(cfg.get_list("methods", "all"), false);
    std::string output = cfg.require_string("output");
    int threads = static_cast<int>(cfg.get_long("threads", 0, 0, 4096));
    bool timings = cfg.get_flag("timings", false);
    cfg.reject_unknown_keys();

    if (variance_mode != "homoskedastic" && variance_mode != "hc")
        throw ConfigError("variance_mode must be homoskedastic or hc");
    base.tuning.variance_mode =
        variance_mode == "hc" ? VarianceMode::hc : VarianceMode::homoskedastic;

    std::vector<double> etas;
    for (const auto& s : eta_strs) {
        double v;
        if (!parse_double(s, v) || v <= 0.0)
            throw ConfigError("eta values must be positive numbers, got '" + s + "'");
        etas.push_back(v);
    }

    std::vector<ResultRow> rows;
    for (double eta : etas) {
        SimConfig cfg_eta = base;
        cfg_eta.eta = eta;
        auto eta_rows = run_experiment(cfg_eta, methods, threads);
        rows.insert(rows.end(), eta_rows.begin(), eta_rows.end());
    }
    for (const auto& row : rows)
        if (row.failed)
            std::cerr << "warning: replicate " << row.replicate << " method "
                      << method_name(row.method) << " failed: " << row.message << '\n';

    write_results_csv(output, rows, timings);
    write_manifest(output + ".manifest.txt", cfg.ordered(), {});
    std::cout << "wrote " << output << " and " << output << ".manifest.txt\n";
    return 0;
}

int cmd_simulate(Config cfg) {
    SimConfig sim;
    sim.n = static_cast<int>(cfg.get_long("n", sim.n, 1, 1000000));
    sim.j = static_cast<int>(cfg.get_long("j", sim.j, 2, 100000));
    sim.k_sources = static_cast<int>(cfg.get_long("k_sources", sim.k_sources, 0, 10000));
    sim.eta = cfg.get_double("eta", sim.eta, 1e-300, 1e300);
    sim.target_scale = cfg.get_double("target_scale", sim.target_scale, 1e-300, 1e300);
    sim.kernel_rate = cfg.get_double("kernel_rate", sim.kernel_rate, 1e-300, 1e300);
    sim.noise_var_meas = cfg.get_double("noise_var_meas", sim.noise_var_meas, 0.0, 1e300);
    sim.noise_var_reg = cfg.get_double("noise_var_reg", sim.noise_var_reg, 0.0, 1e300);
    sim.latent_grid = static_cast<int>(cfg.get_long("latent_grid", sim.latent_grid, 2, 10000000));
    sim.seed = static_cast<std::uint64_t>(cfg.get_long("seed", 1, 0, LONG_MAX));
    std::string output = cfg.require_string("output");
    cfg.reject_unknown_keys();
    sim.replications = 1;

    Eigen::VectorXd latent = Eigen::VectorXd::LinSpaced(sim.latent_size(), 0.0, 1.0);
    GpSampler target_sampler(latent, sim.target_scale, sim.kernel_rate);
    auto rng = substream(sim.seed, "sim", 0);
    auto target = simulate_dataset(sim, target_sampler, rng, 0);
    save_dataset_prefix(*target.raw, output + "_target");
    if (sim.k_sources > 0) {
        GpSampler source_sampler(latent, sim.eta, sim.kernel_rate);
        for (int k = 1; k <= sim.k_sources; ++k) {
            auto src = simulate_dataset(sim, source_sampler, rng, k);
            save_dataset_prefix(*src.raw, output + "_source" + std::to_string(k));
        }
    }
    std::cout << "wrote dataset prefixes under " << output << "_*\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Transfer-learning estimators for scalar-on-function regression"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    CLI::App* fit = app.add_subcommand("fit", "fit estimators on CSV datasets");
    CLI::App* bench = app.add_subcommand("bench", "run the Monte-Carlo benchmark");
    CLI::App* simulate = app.add_subcommand("simulate", "write simulated example datasets");
    for (CLI::App* cmd : {fit, bench, simulate}) {
        cmd->add_option("config", config_path, "key=value configuration file")->required();
        cmd->add_option("--set", overrides, "override a key, e.g. --set seed=7");
    }

    CLI11_PARSE(app, argc, argv);

    try {
        Config cfg = Config::parse_file(config_path);
        for (const auto& o : overrides) cfg.add_override(o);
        if (fit->parsed()) return cmd_fit(std::move(cfg));
        if (bench->parsed()) return cmd_bench(std::move(cfg));
        return cmd_simulate(std::move(cfg));
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitNumerical;
    }
}
