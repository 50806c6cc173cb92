#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mqt/rng.hpp"
#include "mqt/serialize.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// subprocess harness: every invocation gets the scratch run root via the
// environment, stdout/stderr captured through temp files

struct CmdResult {
  int code = -1;
  std::string out, err;
};

const fs::path& scratch_root() {
  static const fs::path root = [] {
    fs::path p = fs::temp_directory_path() / "mqt_cli_test";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

CmdResult run_cli(const std::string& args) {
  static int call_no = 0;
  const fs::path out_f = scratch_root() / ("out" + std::to_string(call_no) + ".txt");
  const fs::path err_f = scratch_root() / ("err" + std::to_string(call_no) + ".txt");
  ++call_no;
  const std::string cmd = "MQT_RUN_ROOT=" + (scratch_root() / "runs").string() + " " +
                          MQT_CLI_BIN + " " + args + " >" + out_f.string() + " 2>" +
                          err_f.string();
  const int status = std::system(cmd.c_str());
  CmdResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(out_f);
  r.err = read_file(err_f);
  return r;
}

// value of the first "key=..." token in the text
std::string value_of(const std::string& text, const std::string& key) {
  const std::string needle = key + "=";
  size_t at = text.find(needle);
  if (at == std::string::npos) return "";
  at += needle.size();
  size_t end = text.find_first_of(" \n\t", at);
  return text.substr(at, end == std::string::npos ? std::string::npos : end - at);
}

// "run <dir>" line printed by artifact-producing commands
std::string run_dir_of(const std::string& text) {
  size_t at = text.find("run ");
  if (at == std::string::npos) return "";
  size_t end = text.find('\n', at);
  return text.substr(at + 4, end - at - 4);
}

uint64_t hash_tree(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  uint64_t h = 0xcbf29ce484222325ull;
  for (const fs::path& f : files) {
    h = mqt::fnv1a64_str(f.filename().string(), h);
    h = mqt::fnv1a64_str(std::to_string(mqt::file_fnv1a(f.string())), h);
  }
  return h;
}

// ---------------------------------------------------------------------------
// shared fixtures: one tiny dataset, one tiny trained checkpoint

const std::string kTinyModel =
    "--audio-channels 12,12,12 --text-channels 12,12 --trunk-units 16 --trunk-layers 1 "
    "--threads 1";

const std::string& dataset_dir() {
  static const std::string dir = [] {
    const std::string d = (scratch_root() / "ds").string();
    const CmdResult r = run_cli(
        "gen --out " + d +
        " --n 6 --seed 5 --duration-mean 24 --duration-std 2 --duration-min 20 "
        "--duration-max 30 --occupancy 0.04 --corruption 0.2 --folds 3 --threads 1");
    REQUIRE(r.code == 0);
    return d;
  }();
  return dir;
}

std::string train_args() {
  return "train --data " + dataset_dir() +
         " --val-fold 0 --epochs 2 --batch-size 4 --lr 1e-3 --seed 3 " + kTinyModel;
}

struct TrainedModel {
  std::string ckpt, run_dir, stdout_text;
};

const TrainedModel& trained_model() {
  static const TrainedModel tm = [] {
    const CmdResult r = run_cli(train_args());
    REQUIRE(r.code == 0);
    TrainedModel t;
    t.stdout_text = r.out;
    t.run_dir = run_dir_of(r.out);
    const size_t at = r.out.find("checkpoint ");
    REQUIRE(at != std::string::npos);
    t.ckpt = r.out.substr(at + 11, r.out.find(' ', at + 11) - at - 11);
    return t;
  }();
  return tm;
}

}  // namespace

TEST_CASE("generation is idempotent and content-addressed") {
  const std::string base =
      "gen --n 2 --seed 11 --duration-mean 21 --duration-std 1 --duration-min 20 "
      "--duration-max 23 --folds 2 --threads 1 --out ";
  const fs::path a = scratch_root() / "gen_a";
  const fs::path b = scratch_root() / "gen_b";
  const CmdResult r1 = run_cli(base + a.string());
  const CmdResult r2 = run_cli(base + b.string());
  const CmdResult r3 = run_cli(base + a.string());
  REQUIRE(r1.code == 0);
  REQUIRE(r2.code == 0);
  REQUIRE(r3.code == 0);

  // same configuration and seed -> byte-identical datasets wherever they land
  const std::string h1 = value_of(r1.out, "hash");
  CHECK(h1.size() == 16);
  CHECK(h1 == value_of(r2.out, "hash"));
  CHECK(h1 == value_of(r3.out, "hash"));

  // the run directory is addressed by the configuration: reruns share it,
  // changed settings (here --out) get a fresh one, all under the env root
  const std::string d1 = run_dir_of(r1.out);
  CHECK(d1 == run_dir_of(r3.out));
  CHECK(d1 != run_dir_of(r2.out));
  CHECK(d1.rfind((scratch_root() / "runs").string(), 0) == 0);

  const json manifest = json::parse(read_file(d1 + "/manifest.json"));
  CHECK(manifest["command"] == "gen");
  CHECK(manifest["dataset_hash"] == h1);
  CHECK(manifest["seed"] == 11);
  CHECK(manifest["config"]["n"] == "2");
  CHECK(manifest["metrics"]["calls"] == 2);
  CHECK(manifest["checkpoint_hash"].is_null());
  CHECK(manifest["wall_seconds"].is_number());
}

TEST_CASE("usage errors exit 2") {
  CHECK(run_cli("gen --out x --nope 1").code == 2);          // unknown flag
  CHECK(run_cli("train").code == 2);                         // missing required flag
  CHECK(run_cli("eval --data a --ckpt b --permute up").code == 2);  // bad enum value
  CHECK(run_cli("gen --out x --bank poems").code == 2);
  CHECK(run_cli("frobnicate").code == 2);                    // unknown subcommand
  CHECK(run_cli("").code == 2);                              // a subcommand is required

  const CmdResult help = run_cli("--help");
  CHECK(help.code == 0);
  CHECK(help.out.find("gen") != std::string::npos);
  CHECK(help.out.find("ablate") != std::string::npos);
}

TEST_CASE("missing inputs exit 1 and cite the path") {
  const CmdResult r1 = run_cli("train --data /nonexistent/calls");
  CHECK(r1.code == 1);
  CHECK(r1.err.find("/nonexistent/calls") != std::string::npos);

  const std::string ghost = (scratch_root() / "ghost.ckpt").string();
  const CmdResult r2 = run_cli("eval --data " + dataset_dir() + " --ckpt " + ghost);
  CHECK(r2.code == 1);
  CHECK(r2.err.find(ghost) != std::string::npos);

  const CmdResult r3 = run_cli("bench --ckpt " + ghost);
  CHECK(r3.code == 1);
  CHECK(r3.err.find(ghost) != std::string::npos);
}

TEST_CASE("config files apply beneath command-line flags") {
  const fs::path cfg = scratch_root() / "gen.cfg";
  std::ofstream(cfg) << "n = 3\n"
                        "seed = 11            # inline comment\n"
                        "\n"
                        "duration-mean = 21\n"
                        "duration-std = 1\n"
                        "duration-min = 20\n"
                        "duration-max = 23\n"
                        "folds = \"2\"\n"
                        "threads = 1\n";
  const fs::path a = scratch_root() / "cfg_a";
  const fs::path b = scratch_root() / "cfg_b";
  const CmdResult r1 = run_cli("gen --config " + cfg.string() + " --out " + a.string());
  REQUIRE(r1.code == 0);
  CHECK(value_of(r1.out, "calls") == "3");

  // an explicit flag overrides the file, the rest of the file still applies
  const CmdResult r2 =
      run_cli("gen --config " + cfg.string() + " --n 2 --out " + b.string());
  REQUIRE(r2.code == 0);
  CHECK(value_of(r2.out, "calls") == "2");

  // matching settings reproduce the dataset generated without a config file
  const CmdResult plain = run_cli(
      "gen --n 2 --seed 11 --duration-mean 21 --duration-std 1 --duration-min 20 "
      "--duration-max 23 --folds 2 --threads 1 --out " +
      (scratch_root() / "gen_a").string());
  REQUIRE(plain.code == 0);
  CHECK(value_of(r2.out, "hash") == value_of(plain.out, "hash"));
}

TEST_CASE("config errors cite the file and line") {
  const fs::path bad_key = scratch_root() / "bad_key.cfg";
  std::ofstream(bad_key) << "n = 3\nwibble = 1\n";
  const CmdResult r1 = run_cli("gen --config " + bad_key.string() + " --out x");
  CHECK(r1.code == 1);
  CHECK(r1.err.find("bad_key.cfg line 2") != std::string::npos);
  CHECK(r1.err.find("wibble") != std::string::npos);

  const fs::path bad_value = scratch_root() / "bad_value.cfg";
  std::ofstream(bad_value) << "sigma = abc\n";
  const CmdResult r2 = run_cli("gen --config " + bad_value.string() + " --out x");
  CHECK(r2.code == 1);
  CHECK(r2.err.find("bad_value.cfg line 1") != std::string::npos);
  CHECK(r2.err.find("sigma") != std::string::npos);

  const fs::path bad_syntax = scratch_root() / "bad_syntax.cfg";
  std::ofstream(bad_syntax) << "# header\n# more\njust text\n";
  const CmdResult r3 = run_cli("gen --config " + bad_syntax.string() + " --out x");
  CHECK(r3.code == 1);
  CHECK(r3.err.find("bad_syntax.cfg line 3") != std::string::npos);

  const CmdResult r4 = run_cli("gen --config " + (scratch_root() / "absent.cfg").string() +
                               " --out x");
  CHECK(r4.code == 1);
  CHECK(r4.err.find("absent.cfg") != std::string::npos);
}

TEST_CASE("train, eval, and stream round trip") {
  const uint64_t data_before = hash_tree(dataset_dir());
  const TrainedModel& tm = trained_model();
  REQUIRE(fs::exists(tm.ckpt));

  const json manifest = json::parse(read_file(tm.run_dir + "/manifest.json"));
  CHECK(manifest["command"] == "train");
  CHECK(manifest["dataset_hash"].is_string());
  CHECK(manifest["checkpoint_hash"] == value_of(tm.stdout_text, "hash"));
  CHECK(manifest["metrics"]["n_train"] == 4);
  CHECK(manifest["metrics"]["n_val"] == 2);
  CHECK(manifest["metrics"]["best_epoch"].get<int>() >= 0);
  CHECK(manifest["config"]["modality"] == "both");

  const std::string log = read_file(tm.run_dir + "/train_log.txt");
  CHECK(log.find("epoch=0 ") != std::string::npos);
  CHECK(log.find("epoch=1 ") != std::string::npos);
  CHECK(log.find("val_instance_f1=") != std::string::npos);

  const CmdResult ev =
      run_cli("eval --data " + dataset_dir() + " --ckpt " + tm.ckpt + " --fold 0 --threads 1");
  REQUIRE(ev.code == 0);
  CHECK(ev.out.find("metric=timestep") != std::string::npos);
  CHECK(ev.out.find("metric=instance") != std::string::npos);
  const json report = json::parse(read_file(run_dir_of(ev.out) + "/eval_report.json"));
  CHECK(report["n_calls"] == 2);
  CHECK(report["timestep"]["per_class"].size() == 6);
  const double macro = report["timestep"]["macro_f1"].get<double>();
  CHECK(macro >= 0.0);
  CHECK(macro <= 1.0);
  CHECK(report["confusion"]["counts"].size() == 6);

  const CmdResult st = run_cli("stream --data " + dataset_dir() + " --ckpt " + tm.ckpt +
                               " --call 0 --chunk-seconds 1");
  REQUIRE(st.code == 0);
  const json sreport = json::parse(read_file(run_dir_of(st.out) + "/stream_report.json"));
  CHECK(sreport["steps"] == sreport["expected_steps"]);
  CHECK(sreport["max_abs_diff"].get<double>() < 1e-5);

  // neither training nor evaluation touched the input dataset
  CHECK(hash_tree(dataset_dir()) == data_before);
}

TEST_CASE("reruns are deterministic and reuse the run directory") {
  const TrainedModel& tm = trained_model();
  const CmdResult again = run_cli(train_args());
  REQUIRE(again.code == 0);
  CHECK(run_dir_of(again.out) == tm.run_dir);
  CHECK(value_of(again.out, "hash") == value_of(tm.stdout_text, "hash"));

  const std::string eval_args =
      "eval --data " + dataset_dir() + " --ckpt " + tm.ckpt + " --fold 0 --threads 1";
  const CmdResult e1 = run_cli(eval_args);
  REQUIRE(e1.code == 0);
  const std::string report_1 = read_file(run_dir_of(e1.out) + "/eval_report.json");
  const CmdResult e2 = run_cli(eval_args);
  REQUIRE(e2.code == 0);
  CHECK(run_dir_of(e2.out) == run_dir_of(e1.out));
  CHECK(read_file(run_dir_of(e2.out) + "/eval_report.json") == report_1);
  CHECK(!report_1.empty());
}

TEST_CASE("ablate emits the two-by-three grid") {
  const CmdResult r = run_cli("ablate --data " + dataset_dir() +
                              " --val-fold 0 --epochs 1 --batch-size 4 --lr 1e-3 --seed 3 " +
                              kTinyModel);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("vanilla") != std::string::npos);
  CHECK(r.out.find("permuted") != std::string::npos);

  const std::string dir = run_dir_of(r.out);
  const json report = json::parse(read_file(dir + "/ablate_report.json"));
  for (const char* model : {"vanilla", "permuted"}) {
    for (const char* mode : {"none", "audio", "text"}) {
      const json& cell = report["grid"][model][mode];
      const double f1 = cell["instance_macro_f1"].get<double>();
      CHECK(f1 >= 0.0);
      CHECK(f1 <= 1.0);
      CHECK(cell["timestep_macro_f1"].is_number());
      // instance scores cover the question classes only, never None
      CHECK(report["detail"][model][mode]["instance"]["per_class"].size() == 5);
    }
    CHECK(fs::exists(dir + "/" + model + ".ckpt"));
  }

  CHECK(run_cli("ablate --data " + dataset_dir() + " --val-fold -1").code == 1);
}

TEST_CASE("bench reports throughput") {
  const CmdResult r = run_cli("bench --duration 4 --chunk-seconds 1 --seed 2 --threads 1");
  REQUIRE(r.code == 0);
  const double rtf = std::stod(value_of(r.out, "rtf"));
  CHECK(rtf > 1.0);
  const json report = json::parse(read_file(run_dir_of(r.out) + "/bench.json"));
  CHECK(report["rtf"].get<double>() > 1.0);
  CHECK(report["audio_seconds"].get<double>() == doctest::Approx(4.0).epsilon(0.05));
  CHECK(report["offline"] == false);

  const CmdResult off = run_cli("bench --offline --duration 4 --seed 2");
  REQUIRE(off.code == 0);
  CHECK(std::stod(value_of(off.out, "rtf")) > 1.0);
}

TEST_CASE("dump describes datasets, calls, and checkpoints") {
  const CmdResult ds = run_cli("dump --data " + dataset_dir());
  REQUIRE(ds.code == 0);
  CHECK(value_of(ds.out, "calls") == "6");
  CHECK(value_of(ds.out, "folds") == "3");
  CHECK(value_of(ds.out, "hash").size() == 16);

  const CmdResult call = run_cli("dump --data " + dataset_dir() + " --call 0");
  REQUIRE(call.code == 0);
  CHECK(call.out.find("call:") != std::string::npos);
  CHECK(call.out.find("decoded:") != std::string::npos);
  CHECK(call.out.find("labels:") != std::string::npos);

  const CmdResult ck = run_cli("dump --ckpt " + trained_model().ckpt);
  REQUIRE(ck.code == 0);
  CHECK(ck.out.find("modality=both") != std::string::npos);
  CHECK(ck.out.find("head.w") != std::string::npos);
  CHECK(ck.out.find("parameters total=") != std::string::npos);

  CHECK(run_cli("dump").code == 2);  // exactly one source is required
  CHECK(run_cli("dump --data " + dataset_dir() + " --ckpt " + trained_model().ckpt).code == 2);
  CHECK(run_cli("dump --data " + dataset_dir() + " --call 99").code == 1);
}
