// distillkit command-line front end: dataset generation, curriculum runs,
// run comparison and embedding export.

#include <distillkit/experiment.hpp>

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

namespace {

int cmd_gen_data(const std::string& task_name, std::size_t n, double noise, std::uint64_t seed,
                 std::size_t image_size, const std::string& out_dir) {
    distillkit::TaskKind task;
    if (task_name == "expression") task = distillkit::expression_like();
    else if (task_name == "gender") task = distillkit::gender_like();
    else if (task_name == "age") task = distillkit::age_like();
    else {
        std::cerr << "gen-data: unknown task '" << task_name << "' (expected expression, gender or age)\n";
        return 2;
    }
    auto split = distillkit::generate_synthetic(task, n, noise, seed, image_size);
    distillkit::save_directory(split, out_dir);
    std::cout << "wrote " << (split.train.size() + split.validation.size() + split.test.size()) << " images to "
              << out_dir << " (hash " << distillkit::dataset_hash(split).substr(0, 12) << ")\n";
    return 0;
}

int cmd_run(const std::string& config_path, const std::string& out_dir, long long seed_flag, bool verbose) {
    distillkit::ExperimentConfig cfg;
    try {
        nlohmann::json raw;
        {
            std::ifstream in(config_path);
            if (!in) {
                std::cerr << "run: cannot open config '" << config_path << "'\n";
                return 2;
            }
            in >> raw;
        }
        // seed precedence: --seed flag, then DISTILLKIT_SEED, then config
        if (seed_flag >= 0) raw["seed"] = static_cast<std::uint64_t>(seed_flag);
        else if (const char* env = std::getenv("DISTILLKIT_SEED")) raw["seed"] = std::stoull(env);
        cfg = distillkit::parse_experiment_config(raw);
    } catch (const distillkit::ConfigError& e) {
        std::cerr << "run: config validation failed at " << (e.path.empty() ? "/" : e.path) << ": " << e.what()
                  << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "run: " << e.what() << '\n';
        return 2;
    }

    const std::string dir = out_dir.empty() ? "runs/" + cfg.run_id() : out_dir;
    try {
        auto result = distillkit::run_experiment(cfg, dir);
        if (verbose) std::cout << result.report.to_json().dump(2) << '\n';
        std::cout << "run " << result.run_id << " complete; report at " << dir << "/eval_report.json\n";
        return 0;
    } catch (const distillkit::DivergenceError& e) {
        std::cerr << "run: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "run: " << e.what() << '\n';
        return 1;
    }
}

int cmd_compare(const std::string& baseline, const std::vector<std::string>& runs, const std::string& csv_path) {
    try {
        std::cout << distillkit::compare_runs(baseline, runs, csv_path);
        if (!csv_path.empty()) std::cout << "table written to " << csv_path << '\n';
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "compare: " << e.what() << '\n';
        return 1;
    }
}

int cmd_export_embeddings(const std::string& run_dir, const std::string& which, const std::string& split_name,
                          const std::string& out_path) {
    try {
        namespace fs = std::filesystem;
        nlohmann::json manifest;
        {
            std::ifstream in(fs::path(run_dir) / "manifest.json");
            if (!in) throw std::runtime_error("cannot open manifest in '" + run_dir + "'");
            in >> manifest;
        }
        auto cfg = distillkit::parse_experiment_config(manifest.at("config"));
        auto data = distillkit::materialize_dataset(cfg);
        const std::vector<distillkit::LabeledImage>* images = &data.test;
        if (split_name == "train") images = &data.train;
        else if (split_name == "validation") images = &data.validation;
        else if (split_name != "test") throw std::runtime_error("unknown split '" + split_name + "'");

        const std::string checkpoint = which == "teacher"           ? "teacher.checkpoint.json"
                                       : which == "stage2"          ? "student_stage2.checkpoint.json"
                                       : which == "stage3"          ? "student_stage3.checkpoint.json"
                                       : which == "stage3_triplet"  ? "student_stage3_triplet.checkpoint.json"
                                                                    : "";
        if (checkpoint.empty())
            throw std::runtime_error("unknown model '" + which + "' (teacher, stage2, stage3, stage3_triplet)");
        auto params = distillkit::load_params((fs::path(run_dir) / checkpoint).string());
        auto occluded = which == "teacher" ? *images : distillkit::occlude_all(*images, cfg.run.occlusion_mode);
        auto set = distillkit::extract_embeddings(params, cfg.run.spec, occluded, cfg.run.task, which);

        std::ofstream out(out_path);
        if (!out) throw std::runtime_error("cannot write '" + out_path + "'");
        out << "index,target";
        for (std::size_t j = 0; j < set.matrix.cols; ++j) out << ",e" << j;
        out << '\n';
        out << std::setprecision(17);
        for (std::size_t r = 0; r < set.matrix.rows; ++r) {
            out << r << ',' << set.targets[r];
            for (std::size_t j = 0; j < set.matrix.cols; ++j) out << ',' << set.matrix.row(r)[j];
            out << '\n';
        }
        std::cout << "wrote " << set.matrix.rows << " x " << set.matrix.cols << " embeddings to " << out_path
                  << '\n';
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "export-embeddings: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"teacher-student distillation experiments under drastic occlusion"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset directory");
    std::string gen_task = "expression", gen_out;
    std::size_t gen_n = 2000, gen_image_size = 16;
    double gen_noise = 0.3;
    std::uint64_t gen_seed = 1;
    gen->add_option("--task", gen_task, "expression | gender | age");
    gen->add_option("--n", gen_n, "total sample count");
    gen->add_option("--noise", gen_noise, "pixel/annotation noise level in [0,1)");
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--image-size", gen_image_size, "square image size (multiple of 16)");
    gen->add_option("--out", gen_out, "output directory")->required();

    auto* run = app.add_subcommand("run", "execute the three-stage curriculum from a JSON config");
    std::string run_config, run_out;
    long long run_seed = -1;
    bool run_verbose = false;
    run->add_option("--config", run_config, "config JSON path")->required();
    run->add_option("--out", run_out, "run directory (default runs/<run_id>)");
    run->add_option("--seed", run_seed, "override the config seed (also DISTILLKIT_SEED)");
    run->add_flag("-v,--verbose", run_verbose, "print the evaluation report");

    auto* cmp = app.add_subcommand("compare", "tabulate runs against a baseline with paired significance");
    std::string cmp_baseline, cmp_csv;
    std::vector<std::string> cmp_runs;
    cmp->add_option("--baseline", cmp_baseline, "baseline run directory")->required();
    cmp->add_option("--runs", cmp_runs, "run directories to compare")->required();
    cmp->add_option("--csv", cmp_csv, "CSV output path");

    auto* exp = app.add_subcommand("export-embeddings", "dump a checkpoint's embeddings as CSV");
    std::string exp_run, exp_which = "stage3", exp_split = "test", exp_out;
    exp->add_option("--run", exp_run, "run directory")->required();
    exp->add_option("--model", exp_which, "teacher | stage2 | stage3 | stage3_triplet");
    exp->add_option("--split", exp_split, "train | validation | test");
    exp->add_option("--out", exp_out, "output CSV path")->required();

    CLI11_PARSE(app, argc, argv);

    if (gen->parsed()) return cmd_gen_data(gen_task, gen_n, gen_noise, gen_seed, gen_image_size, gen_out);
    if (run->parsed()) return cmd_run(run_config, run_out, run_seed, run_verbose);
    if (cmp->parsed()) return cmd_compare(cmp_baseline, cmp_runs, cmp_csv);
    if (exp->parsed()) return cmd_export_embeddings(exp_run, exp_which, exp_split, exp_out);
    return 2;
}
