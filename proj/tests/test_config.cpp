#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "vlbt/config.hpp"

using namespace vlbt;

namespace {

std::string write_temp(const std::string& contents) {
    static int counter = 0;
    const std::string path = "config_test_" + std::to_string(counter++) + ".cfg";
    std::ofstream os(path);
    os << contents;
    return path;
}

}  // namespace

TEST_CASE("empty config file yields all defaults") {
    const std::string path = write_temp("");
    const Config cfg = load_config(path, {});
    CHECK(cfg.layers == 2);
    CHECK(cfg.width == 64);
    CHECK(cfg.peak_lr == Catch::Approx(2e-3));
    CHECK(cfg.weight_decay == Catch::Approx(0.05));
    CHECK(cfg.steps == 2000);
    CHECK(cfg.tasks == "mlm,mim,mvlm");
    std::remove(path.c_str());
}

TEST_CASE("scientific notation and comments parse") {
    const std::string path = write_temp("# desk defaults\npeak_lr = 2e-3\nwidth = 32  # narrow\n");
    const Config cfg = load_config(path, {});
    CHECK(cfg.peak_lr == Catch::Approx(0.002));
    CHECK(cfg.width == 32);
    std::remove(path.c_str());
}

TEST_CASE("unknown keys are rejected by name") {
    const std::string path = write_temp("no_such_key = 1\n");
    try {
        load_config(path, {});
        FAIL("expected config_error");
    } catch (const config_error& e) {
        CHECK(std::string(e.what()).find("no_such_key") != std::string::npos);
    }
    std::remove(path.c_str());
}

TEST_CASE("parse failures carry the line number") {
    const std::string path = write_temp("width = 32\nbroken line\n");
    try {
        load_config(path, {});
        FAIL("expected config_error");
    } catch (const config_error& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    std::remove(path.c_str());
}

TEST_CASE("duplicate keys: last wins, warning emitted") {
    const std::string path = write_temp("width = 32\nwidth = 48\n");
    std::ostringstream warnings;
    const Config cfg = load_config(path, {}, warnings);
    CHECK(cfg.width == 48);
    CHECK(warnings.str().find("duplicate") != std::string::npos);
    std::remove(path.c_str());
}

TEST_CASE("overrides win over the file") {
    const std::string path = write_temp("steps = 100\n");
    std::ostringstream warnings;
    const Config cfg = load_config(path, {"steps=25", "warmup_steps=5", "tasks=MVLM"}, warnings);
    CHECK(cfg.steps == 25);
    const TrainConfig t = cfg.train(1);
    CHECK(t.task_mvlm);
    CHECK_FALSE(t.task_mlm);
    CHECK_FALSE(t.task_mim);
    std::remove(path.c_str());
}

TEST_CASE("bad value types name the key") {
    const std::string path = write_temp("steps = banana\n");
    try {
        load_config(path, {});
        FAIL("expected config_error");
    } catch (const config_error& e) {
        CHECK(std::string(e.what()).find("steps") != std::string::npos);
    }
    std::remove(path.c_str());
}

TEST_CASE("config echo contains every key exactly once") {
    const Config cfg;
    const std::string echo = echo_config(cfg);
    CHECK(echo.find("peak_lr = 0.002") != std::string::npos);
    CHECK(echo.find("tasks = mlm,mim,mvlm") != std::string::npos);
    CHECK(echo.find("arch = mome") != std::string::npos);
    // echo is itself loadable and round-trips
    const std::string path = write_temp(echo);
    std::ostringstream warnings;
    const Config back = load_config(path, {}, warnings);
    CHECK(echo_config(back) == echo);
    CHECK(warnings.str().empty());
    std::remove(path.c_str());
}

TEST_CASE("task list validation") {
    const Config cfg = load_config("", {"tasks=bogus"});
    CHECK_THROWS_AS(cfg.train(1), config_error);
    const Config none = load_config("", {"tasks="});
    CHECK_THROWS_AS(none.train(1), config_error);
}

TEST_CASE("derived model config") {
    const Config cfg = load_config("", {"arch=standard", "width=32", "heads=4"});
    const MoMEConfig m = cfg.mome();
    CHECK(m.experts == ExpertSet::Standard);
    CHECK(m.expert_count() == 1);
    CHECK(m.max_text_positions == 18);
    CHECK(m.max_image_positions == 17);
    CHECK(m.text_vocab == 296);
    CHECK(m.patch_dim == 192);
    CHECK_THROWS_AS(load_config("", {"arch=weird"}).mome(), config_error);
}
