// Command line entry point: data generation, tokenizer training,
// pretraining, finetuning, evaluation, gradient checking, and checkpoint
// inspection. All randomness derives from --seed; every run directory
// receives the effective config, a seed record, metrics, and a checkpoint
// sufficient to reproduce the run bit-exactly.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vlbt/vlbt.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::uint64_t seed = 7;
    std::string out_dir = "out";
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "config file (key = value lines)");
    cmd->add_option("--override", args.overrides, "config override key=value (repeatable)");
    cmd->add_option("--seed", args.seed, "master seed for the run");
    cmd->add_option("--out", args.out_dir, "output directory");
}

vlbt::Config load(const CommonArgs& args) {
    return vlbt::load_config(args.config_path, args.overrides);
}

int cmd_gen_data(const CommonArgs& args, const std::string& task, int n,
                 const std::string& path) {
    using namespace vlbt;
    const Config cfg = load(args);
    const int side = static_cast<int>(cfg.image_side);
    if (task == "pairs") {
        write_dataset_file(path, gen_pairs(args.seed, n, side));
    } else if (task == "images") {
        write_dataset_file(path, gen_images(args.seed, n, side));
    } else if (task == "texts") {
        write_dataset_file(path, gen_texts(args.seed, n, side));
    } else if (task == "vqa") {
        write_dataset_file(path, gen_vqa(args.seed, n, side));
    } else if (task == "nlvr") {
        write_dataset_file(path, gen_nlvr(args.seed, n, side));
    } else if (task == "retrieval") {
        write_dataset_file(path, gen_retrieval(args.seed, n, side));
    } else if (task == "imgcls") {
        write_dataset_file(path, gen_imgcls(args.seed, n, side));
    } else {
        throw usage_error("unknown dataset task '" + task + "'");
    }
    std::cout << "wrote " << n << " " << task << " records to " << path << "\n";
    return 0;
}

int cmd_train_tokenizer(const CommonArgs& args) {
    using namespace vlbt;
    const Config cfg = load(args);
    const RunPaths paths = prepare_run_dir(args.out_dir, cfg, args.seed);
    const Vocab vocab = synthetic_vocab();
    const PretrainData data = make_pretrain_data(args.seed, cfg.data(args.seed), vocab);
    const std::vector<float> patches =
        codebook_training_patches(data, static_cast<int>(cfg.codebook_images));
    std::vector<double> errors;
    const Codebook cb = train_codebook(
        patches, static_cast<int>(cfg.patch_size * cfg.patch_size * 3),
        static_cast<int>(cfg.codebook_k), static_cast<int>(cfg.codebook_iters),
        Rng(args.seed).fork(seed_stream::kCodebook).next_u64(), &errors);
    Model<float> empty_model;  // codebook-only container
    empty_model.cfg = cfg.mome();
    save_checkpoint(paths.checkpoint_file(), empty_model, cb, nullptr);
    std::printf("trained codebook K=%d dim=%d, quantization error %.6f -> %.6f\n", cb.k, cb.dim,
                errors.front(), errors.back());
    std::printf("codebook stored in %s\n", paths.checkpoint_file().c_str());
    return 0;
}

int cmd_pretrain(const CommonArgs& args, const std::string& resume) {
    using namespace vlbt;
    const Config cfg = load(args);
    const PretrainOutcome out = run_pretrain(cfg, args.seed, args.out_dir, resume);
    std::printf("pretrained %lld steps; checkpoint at %s\n", out.completed_steps,
                out.paths.checkpoint_file().c_str());
    return 0;
}

int cmd_finetune(const CommonArgs& args, const std::string& task) {
    using namespace vlbt;
    const Config cfg = load(args);
    const FinetuneOutcome out = run_finetune(task, cfg, args.seed, args.out_dir);
    for (const auto& [metric, value] : out.metrics)
        std::printf("%s\t%.6f\n", metric.c_str(), value);
    std::printf("report at %s\n", out.paths.report_file().c_str());
    return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& task) {
    using namespace vlbt;
    const Config cfg = load(args);
    const FinetuneOutcome out = run_eval(task, cfg, args.seed, args.out_dir);
    for (const auto& [metric, value] : out.metrics)
        std::printf("%s\t%.6f\n", metric.c_str(), value);
    return 0;
}

int cmd_grad_check(const CommonArgs& args, double tol, double h) {
    using namespace vlbt;
    const GradCheckReport<double> report = grad_check_full_model(h, tol, args.seed);
    std::printf("%-24s %14s\n", "parameter", "max rel err");
    for (const auto& e : report.entries)
        std::printf("%-24s %14.3e\n", e.name.c_str(), e.max_rel_err);
    std::printf("overall max %.3e, tolerance %.3e: %s\n", report.max_rel_err(), tol,
                report.pass ? "PASS" : "FAIL");
    return report.pass ? 0 : 2;
}

int cmd_inspect(const std::string& path) {
    using namespace vlbt;
    const LoadedCheckpoint ckpt = load_checkpoint(path);
    std::size_t total = 0;
    for (const auto& t : ckpt.tensors) {
        std::string dims;
        for (std::size_t i = 0; i < t.dims.size(); ++i)
            dims += (i ? "x" : "") + std::to_string(t.dims[i]);
        std::printf("%-32s %12s %10zu\n", t.name.c_str(), dims.c_str(), t.numel());
        total += t.numel();
    }
    std::printf("%zu tensors, %zu values\n", ckpt.tensors.size(), total);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale masked vision-language pretraining stack"};
    app.require_subcommand(1);

    CommonArgs args;

    auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset file");
    std::string gen_task = "pairs", gen_path = "dataset.tsv";
    int gen_n = 64;
    add_common(gen, args);
    gen->add_option("--task", gen_task, "pairs|images|texts|vqa|nlvr|retrieval|imgcls");
    gen->add_option("--n", gen_n, "number of records");
    gen->add_option("--file", gen_path, "output file");

    auto* tok = app.add_subcommand("train-tokenizer", "train and store the visual codebook");
    add_common(tok, args);

    auto* pre = app.add_subcommand("pretrain", "run the masked pretraining loop");
    std::string resume;
    add_common(pre, args);
    pre->add_option("--resume", resume, "checkpoint to resume from");

    auto* ft = app.add_subcommand("finetune", "finetune a downstream task");
    std::string ft_task;
    add_common(ft, args);
    ft->add_option("task", ft_task, "vqa|nlvr|retrieval|imgcls")->required();

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a held-out split");
    std::string ev_task;
    add_common(ev, args);
    ev->add_option("task", ev_task, "vqa|nlvr|retrieval|imgcls|crossmodal")->required();

    auto* gc = app.add_subcommand("grad-check", "full-model finite-difference gradient check");
    double tol = 1e-3, fd_h = 1e-3;
    add_common(gc, args);
    gc->add_option("--tol", tol, "max relative error tolerance");
    gc->add_option("--h", fd_h, "central difference step");

    auto* insp = app.add_subcommand("inspect-checkpoint", "list checkpoint tensors");
    std::string insp_path;
    insp->add_option("path", insp_path, "checkpoint file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(args, gen_task, gen_n, gen_path);
        if (tok->parsed()) return cmd_train_tokenizer(args);
        if (pre->parsed()) return cmd_pretrain(args, resume);
        if (ft->parsed()) return cmd_finetune(args, ft_task);
        if (ev->parsed()) return cmd_eval(args, ev_task);
        if (gc->parsed()) return cmd_grad_check(args, tol, fd_h);
        if (insp->parsed()) return cmd_inspect(insp_path);
    } catch (const vlbt::usage_error& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const vlbt::error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
