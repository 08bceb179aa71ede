#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include <realm/records.hpp>
#include <realm/report.hpp>
#include <realm/scenario.hpp>

namespace {

using namespace realm;

constexpr int kExitPass = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;
constexpr int kExitInternal = 3;

struct RunConfig {
    std::string scenario_path;
    std::string out_dir = ".";
    std::string subcommand;
    double tol_decoh = -1.0;  // negative: keep the scenario's value
    double tol_proj = -1.0;
    long long seed = 0;
    int threads = 1;
    bool log = false;
};

void info(const RunConfig& cfg, const std::string& msg) {
    if (cfg.log) std::cerr << "[realm] " << msg << "\n";
}

void verdict_line(const std::string& what, bool passed, const std::string& detail) {
    std::cout << (passed ? "PASS" : "FAIL") << "  " << what;
    if (!detail.empty()) std::cout << "  (" << detail << ")";
    std::cout << "\n";
}

std::string out_path(const RunConfig& cfg, const std::string& scenario_name,
                     const std::string& file) {
    return (std::filesystem::path(cfg.out_dir) / (scenario_name + "-" + file)).string();
}

ReportValue meta_section(const RunConfig& cfg, const Scenario& s) {
    ReportValue meta = ReportValue::object();
    meta.set("seed", cfg.seed);
    meta.set("threads", cfg.threads);
    ReportValue tol = ReportValue::object();
    tol.set("tol_proj", s.tol.tol_proj);
    tol.set("tol_decoh", s.tol.tol_decoh);
    tol.set("tol_rank", s.tol.tol_rank);
    meta.set("tolerances", std::move(tol));
    return meta;
}

ReportValue scenario_section(const Scenario& s) {
    ReportValue sec = ReportValue::object();
    sec.set("name", s.name);
    sec.set("description", s.description);
    sec.set("dimension", s.hamiltonian->dim());
    sec.set("steps", static_cast<long long>(s.steps.size()));
    ReportValue times = ReportValue::array();
    for (int k = 0; k <= s.grid.steps(); ++k) times.push(s.grid.time(k));
    sec.set("grid_times", std::move(times));
    ReportValue notes = ReportValue::array();
    for (const auto& n : s.notes) notes.push(n);
    sec.set("notes", std::move(notes));
    return sec;
}

ReportValue tree_section(const BranchTree& tree) {
    ReportValue sec = ReportValue::object();
    sec.set("steps_built", tree.steps_built());
    ReportValue leaves = ReportValue::array();
    for (const BranchNode* leaf : tree.leaves()) {
        ReportValue l = ReportValue::object();
        l.set("label", leaf->label.str());
        l.set("probability", leaf->probability);
        leaves.push(std::move(l));
    }
    sec.set("leaf_count", tree.leaves().size());
    sec.set("leaves", std::move(leaves));
    BranchSumReport sum = check_branch_sum(tree, 1e-12);
    ReportValue bs = ReportValue::object();
    bs.set("max_residual", sum.max_residual);
    bs.set("passed", sum.passed);
    ReportValue per_step = ReportValue::array();
    for (double r : sum.step_residuals) per_step.push(r);
    bs.set("step_residuals", std::move(per_step));
    sec.set("branch_sum", std::move(bs));
    return sec;
}

ReportValue medium_section(const DecoherenceReport& rep) {
    ReportValue sec = ReportValue::object();
    sec.set("max_offdiag", rep.max_offdiag);
    sec.set("max_diag", rep.max_diag);
    sec.set("threshold", rep.threshold);
    sec.set("passed", rep.passed);
    ReportValue offenders = ReportValue::array();
    size_t shown = 0;
    for (const PairOverlap& p : rep.offenders) {
        if (++shown > 10) break;  // largest first; the rest adds no information
        ReportValue o = ReportValue::object();
        o.set("a", p.a.str());
        o.set("b", p.b.str());
        o.set("magnitude", p.magnitude);
        offenders.push(std::move(o));
    }
    sec.set("offenders", std::move(offenders));
    return sec;
}

ReportValue strong_section(const StrongReport& rep) {
    ReportValue sec = ReportValue::object();
    sec.set("max_cross_past", rep.max_cross_past);
    sec.set("max_final_index_overlap", rep.max_final_index_overlap);
    sec.set("passed", rep.passed);
    sec.set("vacuous", rep.vacuous);
    if (!rep.witness_a.empty()) {
        sec.set("witness_a", rep.witness_a);
        sec.set("witness_b", rep.witness_b);
    }
    sec.set("entry_count", rep.entry_count);
    return sec;
}

ReportValue diagnostic_section(const Diagnostic& d) {
    ReportValue sec = ReportValue::object();
    sec.set("passed", d.passed);
    sec.set("residual", d.residual);
    sec.set("detail", d.detail);
    return sec;
}

ReportValue factorization_section(const Factorization& fact) {
    ReportValue sec = ReportValue::object();
    sec.set("d_s", fact.d_s);
    sec.set("d_e", fact.d_e);
    sec.set("max_block_residual", fact.max_block_residual);
    ReportValue warnings = ReportValue::array();
    for (const auto& w : fact.warnings) warnings.push(w);
    sec.set("warnings", std::move(warnings));
    return sec;
}

/// check-decoherence: medium on the branch vectors, strong/too-strong when
/// the scenario declares a factorization, plus the branch-sum identity.
bool run_decoherence(const RunConfig& cfg, const Scenario& s, const BranchTree& tree,
                     ReportValue& report) {
    info(cfg, "running decoherence checks");
    ReportValue sec = ReportValue::object();
    DecoherenceReport med = medium_check(tree, s.tol, cfg.threads);
    sec.set("medium", medium_section(med));
    write_text_file(out_path(cfg, s.name, "gram.csv"), matrix_csv(med.gram));

    BranchSumReport sum = check_branch_sum(tree, 1e-12);
    bool pass = med.passed && sum.passed;
    verdict_line("medium decoherence", med.passed,
                 "max offdiag " + format_double(med.max_offdiag));
    verdict_line("branch sum", sum.passed,
                 "max residual " + format_double(sum.max_residual));

    if (s.records_factorization.has_value()) {
        ZFamily zf = extract_z(tree, *s.records_factorization, s.tol);
        StrongReport strong = strong_check_z(zf, s.tol);
        sec.set("strong", strong_section(strong));
        Diagnostic ts = too_strong_check(zf, s.tol);
        sec.set("too_strong", diagnostic_section(ts));  // informational only
        pass = pass && strong.passed;
        verdict_line("strong decoherence", strong.passed,
                     "max cross-past " + format_double(strong.max_cross_past));
    }
    report.set("decoherence", std::move(sec));
    return pass;
}

/// factor: narrative commutation, common framework, derived factorization.
bool run_factor(const RunConfig& cfg, const Scenario& s, const BranchTree& tree,
                ReportValue& report) {
    info(cfg, "deriving the common framework and factorization");
    ReportValue sec = ReportValue::object();
    CommutationReport narrative = check_narrative(tree, s.tol.tol_proj);
    ReportValue narr = ReportValue::object();
    narr.set("passed", narrative.passed);
    narr.set("max_commutator", narrative.max_commutator);
    sec.set("narrative", std::move(narr));
    verdict_line("narrative commutation", narrative.passed,
                 "max commutator " + format_double(narrative.max_commutator));
    if (!narrative.passed) {
        report.set("factorization", std::move(sec));
        return false;
    }

    CommonFramework fw = build_common_framework(pooled_projectors(tree), s.tol.tol_proj);
    ReportValue fws = ReportValue::object();
    fws.set("block_count", fw.blocks.size());
    ReportValue ranks = ReportValue::array();
    for (int g = 0; g < fw.blocks.size(); ++g) ranks.push(fw.blocks.member(g).rank());
    fws.set("block_ranks", std::move(ranks));
    fws.set("max_recovery_residual", fw.max_recovery_residual);
    sec.set("framework", std::move(fws));

    Factorization fact = factor_hilbert(fw, s.tol.tol_proj);
    sec.set("derived", factorization_section(fact));
    if (s.records_factorization.has_value())
        sec.set("declared", factorization_section(*s.records_factorization));

    bool pass = fw.max_recovery_residual <= s.tol.tol_proj &&
                fact.max_block_residual <= s.tol.tol_proj;
    verdict_line("factorization", pass,
                 "d_s " + std::to_string(fact.d_s) + ", d_e " + std::to_string(fact.d_e));
    for (const auto& w : fact.warnings) std::cout << "      note: " << w << "\n";
    report.set("factorization", std::move(sec));
    return pass;
}

/// records: z extraction, strong gate, record construction + verification.
bool run_records(const RunConfig& cfg, const Scenario& s, const BranchTree& tree,
                 ReportValue& report) {
    if (!s.records_factorization.has_value())
        throw ScenarioError(
            "scenario declares no system-environment factorization; records need one");
    info(cfg, "constructing records");
    ReportValue sec = ReportValue::object();
    ZFamily zf = extract_z(tree, *s.records_factorization, s.tol);
    StrongReport strong = strong_check_z(zf, s.tol);
    sec.set("strong", strong_section(strong));
    if (!strong.passed) {
        sec.set("note", "strong decoherence fails; records are not guaranteed");
        report.set("records", std::move(sec));
        verdict_line("records", false,
                     "strong cross-past " + format_double(strong.max_cross_past));
        return false;
    }

    RecordSet rs = construct_records(zf, s.tol);
    RecordCheck rc = verify_records(rs, tree, s.tol);
    sec.set("record_step", rs.record_step);
    ReportValue members = ReportValue::array();
    for (const auto& [past, r] : rs.members) {
        ReportValue m = ReportValue::object();
        m.set("past", past.str());
        m.set("rank", r.rank());
        members.push(std::move(m));
    }
    sec.set("members", std::move(members));
    sec.set("ortho_residual", rc.ortho_residual);
    sec.set("projection_residual", rc.projection_residual);
    sec.set("passed", rc.passed);
    verdict_line("records", rc.passed,
                 "projection residual " + format_double(rc.projection_residual));
    report.set("records", std::move(sec));
    return rc.passed;
}

/// density: reduced branch density matrices and the expectation identity.
bool run_density(const RunConfig& cfg, const Scenario& s, const BranchTree& tree,
                 ReportValue& report) {
    if (!s.records_factorization.has_value())
        throw ScenarioError(
            "scenario declares no system-environment factorization; "
            "reduced density matrices need one");
    info(cfg, "computing branch density matrices");
    const Factorization& fact = *s.records_factorization;
    ReportValue sec = ReportValue::object();

    bool traces_ok = true;
    ReportValue branches = ReportValue::array();
    for (const BranchNode* leaf : tree.leaves()) {
        BranchDensityMatrix rho = branch_density_matrix(tree, fact, leaf->label);
        ReportValue b = ReportValue::object();
        b.set("label", leaf->label.str());
        b.set("trace", rho.probability());
        double p = rho.probability();
        b.set("purity", p > 1e-12 ? (rho.rho_s * rho.rho_s).trace().real() / (p * p) : 0.0);
        branches.push(std::move(b));
        traces_ok = traces_ok && std::abs(p - leaf->probability) <= 1e-10;
        write_text_file(out_path(cfg, s.name, "rho-" + leaf->label.str() + ".csv"),
                        matrix_csv(rho.rho_s));
    }
    sec.set("branches", std::move(branches));
    sec.set("traces_match_probabilities", traces_ok);
    verdict_line("branch density traces", traces_ok, "");

    bool expectations_ok = true;
    ReportValue obs_list = ReportValue::array();
    for (const SystemObservable& obs : s.observables) {
        ExpectationCheck ec = expectation_identity_check(tree, fact, obs, s.tol);
        ReportValue o = ReportValue::object();
        o.set("name", obs.name);
        o.set("full_value", ec.full_value);
        o.set("reduced_value", ec.reduced_value);
        o.set("branch_sum_value", ec.branch_sum_value);
        o.set("reduced_residual", ec.reduced_residual);
        o.set("branch_residual", ec.branch_residual);
        o.set("passed", ec.passed);
        obs_list.push(std::move(o));
        expectations_ok = expectations_ok && ec.passed;
        verdict_line("expectation identity: " + obs.name, ec.passed,
                     "branch residual " + format_double(ec.branch_residual));
    }
    sec.set("observables", std::move(obs_list));
    report.set("density", std::move(sec));
    return traces_ok && expectations_ok;
}

/// refine: greedy maximal refinement over the scenario's candidate list.
/// Rejected candidates are legitimate outcomes, not failures.
bool run_refine(const RunConfig& cfg, const Scenario& s, const BranchTree& tree,
                ReportValue& report) {
    info(cfg, "refining against the candidate list");
    ReportValue sec = ReportValue::object();
    sec.set("mode", s.refine_mode == RefineMode::Strong ? "strong" : "medium");
    if (s.refinement_candidates.empty()) {
        sec.set("note", "scenario ships no refinement candidates");
        sec.set("accepted", 0);
        report.set("refinement", std::move(sec));
        verdict_line("refinement", true, "no candidates");
        return true;
    }
    const Factorization* fact = s.records_factorization.has_value()
                                    ? &*s.records_factorization
                                    : nullptr;
    auto [refined, rep] = maximal_refine(tree, s.refinement_candidates, s.refine_mode,
                                         s.tol, fact);
    sec.set("sweeps", rep.sweeps);
    sec.set("accepted", rep.accepted_count);
    sec.set("final_leaf_count", rep.final_leaf_count);
    sec.set("final_measure", rep.final_measure);
    ReportValue outcomes = ReportValue::array();
    for (const RefinementOutcome& oc : rep.outcomes) {
        ReportValue o = ReportValue::object();
        o.set("sweep", oc.sweep);
        o.set("step", oc.step);
        o.set("branch", oc.branch.str());
        o.set("set", oc.set_name);
        o.set("accepted", oc.accepted);
        o.set("measure", oc.measure);
        o.set("note", oc.note);
        outcomes.push(std::move(o));
    }
    sec.set("outcomes", std::move(outcomes));
    report.set("refinement", std::move(sec));
    verdict_line("refinement", true,
                 std::to_string(rep.accepted_count) + " of " +
                     std::to_string(rep.outcomes.size()) + " candidates accepted");
    return true;
}

int run(const RunConfig& cfg) {
    Scenario s = load_scenario(cfg.scenario_path);
    if (cfg.tol_decoh > 0) s.tol.tol_decoh = cfg.tol_decoh;
    if (cfg.tol_proj > 0) s.tol.tol_proj = cfg.tol_proj;
    std::filesystem::create_directories(cfg.out_dir);

    info(cfg, "building the branch tree for '" + s.name + "'");
    BranchTree tree = build_tree(s);

    ReportValue report = make_report(s.name, cfg.subcommand);
    report.set("meta", meta_section(cfg, s));
    report.set("scenario", scenario_section(s));
    report.set("tree", tree_section(tree));

    bool pass = true;
    const std::string& sub = cfg.subcommand;
    if (sub == "check-decoherence" || sub == "all")
        pass = run_decoherence(cfg, s, tree, report) && pass;
    if (sub == "factor" || sub == "all") pass = run_factor(cfg, s, tree, report) && pass;
    if (sub == "records" || (sub == "all" && s.records_factorization.has_value()))
        pass = run_records(cfg, s, tree, report) && pass;
    if (sub == "density" || (sub == "all" && s.records_factorization.has_value()))
        pass = run_density(cfg, s, tree, report) && pass;
    if (sub == "refine" || sub == "all") pass = run_refine(cfg, s, tree, report) && pass;
    report.set("passed", pass);

    std::string path = out_path(cfg, s.name, cfg.subcommand + ".json");
    write_text_file(path, report.str());
    std::cout << "report: " << path << "\n";
    return pass ? kExitPass : kExitCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"decoherent-histories scenario runner"};
    app.fallthrough();
    RunConfig cfg;
    app.add_option("--scenario", cfg.scenario_path, "scenario JSON file")->required();
    app.add_option("--out", cfg.out_dir, "output directory for reports and CSV files");
    app.add_option("--tol-decoh", cfg.tol_decoh, "override the decoherence tolerance");
    app.add_option("--tol-proj", cfg.tol_proj, "override the projector tolerance");
    app.add_option("--seed", cfg.seed, "seed echoed into the report meta section");
    app.add_option("--threads", cfg.threads, "threads for Gram-matrix assembly")
        ->check(CLI::PositiveNumber);
    app.require_subcommand(1);
    for (const char* name : {"check-decoherence", "factor", "records", "density",
                             "refine", "all"})
        app.add_subcommand(name, "");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }
    cfg.subcommand = app.get_subcommands().front()->get_name();
    const char* log_env = std::getenv("REALM_LOG");
    cfg.log = log_env != nullptr && std::string(log_env) != "" && std::string(log_env) != "0";

    try {
        return run(cfg);
    } catch (const ScenarioError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kExitInternal;
    }
}
