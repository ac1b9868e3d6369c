#include "nbp/io.hpp"
#include "nbp/nbp.hpp"

#include "CLI11.hpp"

#include <openssl/evp.h>

#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>

namespace {

constexpr const char* tool_version = "1.0.0";

enum Exit { ok = 0, input_error = 1, not_converged = 2, not_fixed_point = 3, too_large = 4 };

std::string sha256_hex(const std::string& data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr);
    std::ostringstream out;
    for (unsigned int k = 0; k < len; ++k) out << std::hex << std::setw(2) << std::setfill('0') << int(md[k]);
    return out.str();
}

nbp::Json header(const std::string& command, const std::string& digest_input) {
    nbp::Json j;
    j["tool"] = {{"name", "nbp"}, {"version", tool_version}};
    j["command"] = command;
    j["input_digest"] = "sha256:" + sha256_hex(digest_input);
    return j;
}

void emit(const nbp::Json& j) { std::cout << j.dump(2) << '\n'; }

int fail(nbp::ErrorCode code, const std::string& detail) {
    emit(nbp::Json{{"error", std::string(nbp::to_string(code))}, {"detail", detail}});
    switch (code) {
        case nbp::ErrorCode::NotAFixedPoint: return not_fixed_point;
        case nbp::ErrorCode::StateSpaceTooLarge: return too_large;
        default: return input_error;
    }
}

struct RunArgs {
    std::string graph;
    std::string norm = "mess";
    std::string schedule = "parallel";
    std::string init = "uniform";
    std::uint64_t seed = 0;
    double tol = 1e-9;
    std::size_t max_iter = 10000;
    std::string track = "messages";
};

int cmd_run(const RunArgs& a) {
    const std::string text = nbp::read_text_file(a.graph);
    const nbp::Model model = nbp::model_from_json(nbp::parse_json_text(text, a.graph));
    nbp::RunOptions opt;
    opt.normalization = nbp::parse_normalization(a.norm);
    opt.schedule = nbp::parse_schedule(a.schedule);
    opt.init = nbp::parse_init(a.init);
    opt.seed = a.seed;
    opt.tol = a.tol;
    opt.max_iter = a.max_iter;
    opt.track = nbp::parse_tracker(a.track);
    const auto rep = nbp::run(model, opt);

    auto j = header("run", text);
    j["options"] = nbp::run_options_to_json(opt);
    j["run"] = nbp::run_report_to_json(model.graph(), rep);
    const bool converged = rep.converged(opt.track);
    if (converged) j["free_energy"] = nbp::free_energy_to_json(nbp::free_energy_report(model, rep.final_beliefs));
    emit(j);
    return converged ? ok : not_converged;
}

struct AnalyzeArgs {
    std::string graph;
    std::string from_run;
    std::string prescribed;
    double fp_tol = 1e-7;
};

int cmd_analyze(const AnalyzeArgs& a) {
    const std::string text = nbp::read_text_file(a.graph);
    const nbp::Model file_model = nbp::model_from_json(nbp::parse_json_text(text, a.graph));
    const auto& g = file_model.graph();
    std::string digest_input = text;

    std::optional<nbp::Model> model;
    nbp::BeliefSet b;
    std::string source;
    if (!a.from_run.empty()) {
        const std::string run_text = nbp::read_text_file(a.from_run);
        digest_input += run_text;
        const auto report = nbp::parse_json_text(run_text, a.from_run);
        if (!report.contains("run") || !report["run"].contains("final_messages")) {
            throw nbp::Error(nbp::ErrorCode::ParseError, "'" + a.from_run + "' is not a run report");
        }
        const auto m = nbp::messages_from_json(g, report["run"]["final_messages"]);
        model = file_model;
        b = nbp::beliefs(*model, m);
        source = "run";
    } else {
        if (a.prescribed == "uniform") {
            b = nbp::uniform_beliefs(g);
        } else {
            const std::string btext = nbp::read_text_file(a.prescribed);
            digest_input += btext;
            b = nbp::beliefs_from_json(g, nbp::parse_json_text(btext, a.prescribed));
        }
        // Beliefs that fail marginal compatibility cannot be a BP fixed point of any model.
        try {
            model = nbp::prescribed_belief_model(g, b, a.fp_tol);
        } catch (const nbp::Error& e) {
            if (e.code() == nbp::ErrorCode::IncompatibleBeliefs) {
                throw nbp::Error(nbp::ErrorCode::NotAFixedPoint, e.detail());
            }
            throw;
        }
        source = "prescribed";
    }
    nbp::StabilityOptions so;
    so.fixed_point_tol = a.fp_tol;
    const auto stab = nbp::stability_report(*model, b, so);
    const auto fe = nbp::free_energy_report(*model, b);

    auto j = header("analyze", digest_input);
    j["source"] = source;
    j["beliefs"] = nbp::beliefs_to_json(g, b);
    j["stability"] = nbp::stability_to_json(stab);
    j["free_energy"] = nbp::free_energy_to_json(fe);
    emit(j);
    return ok;
}

int cmd_oracle(const std::string& graph) {
    const std::string text = nbp::read_text_file(graph);
    const nbp::Model model = nbp::model_from_json(nbp::parse_json_text(text, graph));
    std::uint64_t cap = nbp::default_state_cap;
    if (const char* env = std::getenv("BP_STATE_CAP")) {
        try {
            cap = std::stoull(env);
        } catch (const std::exception&) {
            throw nbp::Error(nbp::ErrorCode::InvalidArgument, "BP_STATE_CAP must be a positive integer");
        }
    }
    const auto r = nbp::exact_marginals(model, cap);
    auto j = header("oracle", text);
    j["exact"] = nbp::exact_to_json(model.graph(), r);
    emit(j);
    return ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Belief propagation with interchangeable message normalizations"};
    app.require_subcommand(1);
    app.set_version_flag("--version", tool_version);

    RunArgs ra;
    auto* run = app.add_subcommand("run", "iterate BP and report convergence");
    run->add_option("--graph", ra.graph, "graph file")->required();
    run->add_option("--norm", ra.norm, "none|mess|max|first|bel|variational|badmaxratio")->capture_default_str();
    run->add_option("--schedule", ra.schedule, "parallel|sequential")->capture_default_str();
    run->add_option("--init", ra.init, "uniform|random")->capture_default_str();
    run->add_option("--seed", ra.seed)->capture_default_str();
    run->add_option("--tol", ra.tol)->capture_default_str();
    run->add_option("--max-iter", ra.max_iter)->capture_default_str();
    run->add_option("--track", ra.track, "messages|beliefs|quotient")->capture_default_str();

    AnalyzeArgs aa;
    auto* analyze = app.add_subcommand("analyze", "stability and free energy at a fixed point");
    analyze->add_option("--graph", aa.graph, "graph file")->required();
    auto* from_run = analyze->add_option("--from-run", aa.from_run, "report written by 'run'");
    auto* prescribed = analyze->add_option("--prescribed", aa.prescribed, "belief file, or 'uniform'");
    from_run->excludes(prescribed);
    analyze->add_option("--fp-tol", aa.fp_tol, "fixed-point tolerance")->capture_default_str();

    std::string oracle_graph;
    auto* oracle = app.add_subcommand("oracle", "exact marginals by enumeration");
    oracle->add_option("--graph", oracle_graph, "graph file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail(nbp::ErrorCode::InvalidArgument, e.what());
    }

    try {
        if (*run) return cmd_run(ra);
        if (*analyze) {
            if (aa.from_run.empty() && aa.prescribed.empty()) {
                return fail(nbp::ErrorCode::InvalidArgument, "analyze needs --from-run or --prescribed");
            }
            return cmd_analyze(aa);
        }
        return cmd_oracle(oracle_graph);
    } catch (const nbp::Error& e) {
        return fail(e.code(), e.detail());
    } catch (const std::exception& e) {
        return fail(nbp::ErrorCode::InvalidArgument, e.what());
    }
}
