#include "ppad/errors.hpp"
#include "ppad/harness.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

using namespace ppad;
using namespace ppad::harness;

namespace {

struct ConfigArgs {
    std::vector<std::string> files;
    std::vector<std::string> sets;

    void attach(CLI::App* cmd)
    {
        cmd->add_option("-c,--config", files, "config layer (key = value file); later layers win");
        cmd->add_option("--set", sets, "override, key=value (applied after all files)");
    }
    ExperimentConfig resolve() const
    {
        ExperimentConfig c;
        for (const auto& f : files) apply_file(c, f);
        for (const auto& s : sets) apply_override(c, s);
        c.validate();
        return c;
    }
};

void print_report(const metrics::MetricsReport& r)
{
    std::printf("scenes %d\n", r.scene_count);
    std::printf("              1s      2s      3s     avg\n");
    const auto row = [](const char* name, const metrics::Horizon& h) {
        std::printf("%-10s %7.3f %7.3f %7.3f %7.3f\n", name, h[0], h[1], h[2], h[3]);
    };
    row("L2 stp3", r.l2_stp3);
    row("L2 uniad", r.l2_uniad);
    row("Col% stp3", r.cr_stp3);
    row("Col% uniad", r.cr_uniad);
    std::printf("minADE %.3f  minFDE %.3f  MR %.3f\n", r.minADE, r.minFDE, r.miss_rate);
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"ppad: iterative prediction-planning on synthetic driving scenes"};
    app.require_subcommand(1);

    ConfigArgs gen_args, train_args, ablate_args;

    CLI::App* gen = app.add_subcommand("gen", "generate a dataset into paths.data_dir");
    gen_args.attach(gen);

    CLI::App* tr = app.add_subcommand("train", "train on paths.data_dir, write paths.run_dir");
    train_args.attach(tr);

    std::string eval_ckpt, eval_data, eval_out;
    CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    ev->add_option("--checkpoint", eval_ckpt, "checkpoint.bin")->required();
    ev->add_option("--data", eval_data, "dataset directory")->required();
    ev->add_option("--out", eval_out, "output directory (default: next to the checkpoint)");

    std::string table = "iterations";
    CLI::App* ab = app.add_subcommand("ablate", "train and evaluate the arms of an ablation table");
    ablate_args.attach(ab);
    ab->add_option("--table", table, "design | interaction | iterations");

    std::string bench_ckpt, bench_data, bench_out;
    int repeats = 20;
    CLI::App* be = app.add_subcommand("bench", "rollout latency for N in {2, 3, 6}");
    be->add_option("--checkpoint", bench_ckpt, "checkpoint.bin")->required();
    be->add_option("--data", bench_data, "dataset directory")->required();
    be->add_option("--repeats", repeats, "timed rollouts per N");
    be->add_option("--out", bench_out, "optional CSV path");

    std::string plot_run;
    CLI::App* pl = app.add_subcommand("plot", "write SVG plots and their CSV data");
    pl->add_option("--run", plot_run, "run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) {
            const ExperimentConfig c = gen_args.resolve();
            const Dataset d = cmd_gen(c);
            const auto counts = mix_counts(c.gen_mix, c.gen_count);
            std::printf("wrote %zu scenes to %s (checksum %s)\n", d.scenes.size(), c.data_dir.c_str(),
                        hex64(d.checksum()).c_str());
            for (std::size_t i = 0; i < counts.size(); ++i)
                std::printf("  %-18s %d\n", scene::to_string(c.gen_mix[i].first), counts[i]);
        } else if (tr->parsed()) {
            const ExperimentConfig c = train_args.resolve();
            const TrainOutput out = cmd_train(c);
            std::printf("trained %zu steps, run written to %s\n", out.log.size(), out.run_dir.c_str());
            print_report(out.train_report);
        } else if (ev->parsed()) {
            std::string out = eval_out;
            if (out.empty()) {
                const auto slash = eval_ckpt.find_last_of('/');
                out = (slash == std::string::npos ? std::string(".") : eval_ckpt.substr(0, slash)) + "/eval";
            }
            const EvalOutput r = cmd_eval(eval_ckpt, eval_data, out);
            print_report(r.report);
            std::printf("report: %s/report.json\n", out.c_str());
        } else if (ab->parsed()) {
            const ExperimentConfig c = ablate_args.resolve();
            const AblationResult r = cmd_ablate(c, parse_table(table));
            std::cout << ablation_markdown(r);
            if (r.table == AblationTable::iterations) {
                const double n6 = r.rows.back().l2[3], n2 = r.rows.front().l2[3];
                std::printf("trend avg L2 N=6 <= N=2: %s (%.4f vs %.4f)\n", n6 <= n2 ? "holds" : "FAILS", n6, n2);
            }
        } else if (be->parsed()) {
            const BenchResult r = cmd_bench(bench_ckpt, bench_data, repeats);
            std::string csv = "iterations,median_ms,p95_ms,stddev_ms\n";
            std::printf("   N  median_ms   p95_ms  stddev_ms\n");
            for (const BenchRow& row : r.rows) {
                std::printf("%4d %10.3f %8.3f %10.3f\n", row.iterations, row.median_ms, row.p95_ms, row.stddev_ms);
                char buf[128];
                std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f\n", row.iterations, row.median_ms, row.p95_ms,
                              row.stddev_ms);
                csv += buf;
            }
            std::printf("fit: %.3f ms + %.3f ms/N, R^2 %.4f\n", r.intercept_ms, r.slope_ms, r.r2);
            std::printf("ordering median(N=6) >= median(N=2): %s\n", r.ordering_holds ? "holds" : "FAILS");
            if (!bench_out.empty()) write_file(bench_out, csv);
            if (!r.ordering_holds) return 4;
        } else if (pl->parsed()) {
            for (const std::string& f : cmd_plot(plot_run)) std::printf("%s/plots/%s\n", plot_run.c_str(), f.c_str());
        }
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
