#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "dtr/error.hpp"
#include "dtr/io.hpp"
#include "dtr/simgen.hpp"
#include "dtr/surface.hpp"

namespace dtr {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("dtr_cli_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

// Runs the CLI with stdout captured to `stdout_path`; returns the exit status.
int run_cli(const std::string& args, const fs::path& stdout_path) {
  const std::string cmd = std::string(DTR_BINARY) + " " + args + " > " + stdout_path.string() + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

IngestSchema two_stage_schema() {
  IngestSchema s;
  s.id = "id";
  s.stages = {{{"X1"}, "A1"}, {{"X2"}, "A2"}};
  s.outcome = "Y";
  return s;
}

TEST(Ingest, ReadsRows) {
  std::istringstream in("id,X1,A1,X2,A2,Y\na,1,0,2,1,3\nb,4,1,5,0,6\nc,7,1,8,1,9\n");
  const auto panel = ingest_csv(in, two_stage_schema());
  EXPECT_EQ(panel.size(), 3u);
  EXPECT_EQ(panel.covariate(1, 2, 0), 8.0);
  EXPECT_EQ(panel.treatment(0, 1), 1);
  EXPECT_EQ(panel.ids()[0], "a");
}

TEST(Ingest, DropRowPolicyRecordsReason) {
  auto schema = two_stage_schema();
  schema.missing = MissingPolicy::kDropRow;
  std::istringstream in("id,X1,A1,X2,A2,Y\na,1,0,2,1,3\nb,4,1,5,0,\nc,7,1,8,1,9\n");
  IngestReport report;
  const auto panel = ingest_csv(in, schema, &report);
  EXPECT_EQ(panel.size(), 2u);
  EXPECT_EQ(report.rows_in, 3u);
  EXPECT_EQ(report.rows_out, 2u);
  ASSERT_EQ(report.dropped.size(), 1u);
  EXPECT_NE(report.dropped[0].find("line 3"), std::string::npos);
}

TEST(Ingest, FailPolicyRejectsMissing) {
  std::istringstream in("id,X1,A1,X2,A2,Y\na,1,0,2,1,\n");
  EXPECT_THROW((void)ingest_csv(in, two_stage_schema()), Error);
}

TEST(Ingest, UnknownTreatmentCodeNamesRow) {
  std::istringstream in("id,X1,A1,X2,A2,Y\na,1,0,2,1,3\nb,4,7,5,0,6\n");
  try {
    (void)ingest_csv(in, two_stage_schema());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kData);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(Ingest, TreatmentCodeMap) {
  auto schema = two_stage_schema();
  schema.treatment_codes = {{"yes", 1}, {"no", 0}};
  std::istringstream in("id,X1,A1,X2,A2,Y\na,1,yes,2,no,3\n");
  const auto panel = ingest_csv(in, schema);
  EXPECT_EQ(panel.treatment(0, 0), 1);
  EXPECT_EQ(panel.treatment(1, 0), 0);
}

TEST(Ingest, InferSchema) {
  const auto s = infer_schema({"id", "X1", "A1", "X2", "X3", "A2", "Y"});
  EXPECT_EQ(s.id, "id");
  ASSERT_EQ(s.stages.size(), 2u);
  EXPECT_EQ(s.stages[1].covariates, (std::vector<std::string>{"X2", "X3"}));
  EXPECT_EQ(s.stages[1].treatment, "A2");
  EXPECT_EQ(s.outcome, "Y");
  EXPECT_THROW((void)infer_schema({"X1", "Y"}), Error);
}

TEST(Ingest, WriteThenReadIsBitIdentical) {
  const auto panel = generate(DgpSpec{}, 400, 9);
  std::stringstream csv;
  write_panel_csv(csv, panel);
  const auto header_line = csv.str().substr(0, csv.str().find('\n'));
  std::vector<std::string> header;
  std::stringstream hs(header_line);
  for (std::string h; std::getline(hs, h, ',');) {
    header.push_back(h);
  }
  const auto back = ingest_csv(csv, infer_schema(header));
  EXPECT_EQ(back.outcome(), panel.outcome());
  EXPECT_EQ(back.stage(1).covariates, panel.stage(1).covariates);

  EstimationSettings settings;
  settings.nuisance = default_nuisance(DgpSpec{}, panel);
  settings.gaw = GawConfig{0.18, 0.5};
  for (const auto* name : {"nipw", "ngaw", "naipw"}) {
    const auto spec = EstimatorSpec::parse(name);
    const auto a = estimate(panel, default_regime(DgpKind::kSim1), spec, settings);
    const auto b = estimate(back, default_regime(DgpKind::kSim1), spec, settings);
    EXPECT_EQ(a.value, b.value) << name;
  }
}

TEST(ConfigTest, ParsesCommentsAndQuotes) {
  std::istringstream in("# header\nrun.seed = 7  # trailing\nestimate.regime = \"1:X1<=350 # kept\"\n\ngaw.c=0.2\n");
  const auto c = Config::parse(in);
  EXPECT_EQ(c.get("run.seed"), "7");
  EXPECT_EQ(c.get("estimate.regime"), "1:X1<=350 # kept");
  EXPECT_EQ(c.get_number("gaw.c"), 0.2);
  EXPECT_FALSE(c.get("missing").has_value());
}

TEST(ConfigTest, RejectsDuplicatesAndBadLines) {
  std::istringstream dup("a = 1\na = 2\n");
  EXPECT_THROW((void)Config::parse(dup), Error);
  std::istringstream bad("just text\n");
  EXPECT_THROW((void)Config::parse(bad), Error);
  std::istringstream not_number("gaw.c = abc\n");
  const auto c = Config::parse(not_number);
  EXPECT_THROW((void)c.get_number("gaw.c"), Error);
}

TEST(Parsers, RegimeRoundTrip) {
  const auto p1 = generate(DgpSpec{}, 10, 1);
  const auto r = parse_regime("1:X1<=350;2:X2<=450", p1);
  EXPECT_EQ(r.thresholds(), (std::vector<double>{350, 450}));
  EXPECT_EQ(format_regime(r, p1), "1:X1<=350;2:X2<=450");
  const auto flipped = parse_regime("1:X1>=350;2:X2<=450", p1);
  EXPECT_EQ(flipped.clauses(0)[0].direction, Direction::kGreaterEqual);

  DgpSpec s2;
  s2.kind = DgpKind::kSim2;
  const auto p2 = generate(s2, 10, 1);
  const auto conj = parse_regime("1:X1<=430&X2<=80", p2);
  EXPECT_EQ(conj.clause_count(), 2u);
  EXPECT_EQ(format_regime(conj, p2), "1:X1<=430&X2<=80");

  EXPECT_THROW((void)parse_regime("1:Z<=3;2:X2<=450", p1), Error);
  EXPECT_THROW((void)parse_regime("1:X1<=350", p1), Error);
  EXPECT_THROW((void)parse_regime("1:X1<350;2:X2<=450", p1), Error);
}

TEST(Parsers, Grid) {
  const auto g = parse_grid("psi1=150:500:5,psi2=200:600:5");
  ASSERT_EQ(g.size(), 2u);
  EXPECT_EQ(g[0].values.size(), 71u);
  EXPECT_EQ(g[1].values.size(), 81u);
  EXPECT_EQ(g[1].values.back(), 600.0);
  const auto single = parse_grid("psi1=350,psi2=400:410:5");
  EXPECT_EQ(single[0].values, (std::vector<double>{350}));
  EXPECT_THROW((void)parse_grid("psi1=1:0:1"), Error);
  EXPECT_THROW((void)parse_grid("psi1"), Error);
}

TEST(Parsers, WindowAxes) {
  const auto w = parse_window_axes("s1c1=0:10:2,s2c1.upper=0:4:2");
  ASSERT_EQ(w.size(), 2u);
  EXPECT_EQ(w[0].stage, 0u);
  EXPECT_EQ(w[0].side, WindowSide::kBoth);
  EXPECT_EQ(w[0].values.size(), 6u);
  EXPECT_EQ(w[1].stage, 1u);
  EXPECT_EQ(w[1].side, WindowSide::kUpper);
  EXPECT_THROW((void)parse_window_axes("x=0:1:1"), Error);
}

TEST(Parsers, Estimators) {
  const auto e = parse_estimators("nipw, ngaw,nabaw");
  ASSERT_EQ(e.size(), 3u);
  EXPECT_EQ(e[2].name(), "nabaw");
  EXPECT_THROW((void)parse_estimators("nipw,foo"), Error);
}

TEST(Binary, UsageErrorExitsTwo) {
  const auto dir = scratch("usage");
  EXPECT_EQ(run_cli("estimate --bogus", dir / "out.json"), 2);
  EXPECT_EQ(run_cli("estimate --regime '1:X1<=1;2:X2<=1'", dir / "out.json"), 2);
}

TEST(Binary, SimulateEstimateAndSurface) {
  const auto dir = scratch("flow");
  ASSERT_EQ(run_cli("--seed 4 --out-dir " + dir.string() + " simulate --dgp sim1 --n 300", dir / "sim.json"), 0);
  ASSERT_TRUE(fs::exists(dir / "panel.csv"));

  const auto est_out = dir / "est.json";
  ASSERT_EQ(run_cli("estimate --data " + (dir / "panel.csv").string() +
                        " --regime '1:X1<=350;2:X2<=450' --estimator nipw,ngaw",
                    est_out),
            0);
  const auto text = slurp(est_out);
  EXPECT_NE(text.find("\"schema_version\": 1"), std::string::npos);
  EXPECT_NE(text.find("\"ngaw\""), std::string::npos);

  ASSERT_EQ(run_cli("--out-dir " + dir.string() + " surface --data " + (dir / "panel.csv").string() +
                        " --regime '1:X1<=350;2:X2<=450' --grid psi1=150:500:5,psi2=200:600:5 --estimator nipw",
                    dir / "surf.json"),
            0);
  std::ifstream csv(dir / "surface.csv");
  std::size_t lines = 0;
  for (std::string line; std::getline(csv, line);) {
    ++lines;
  }
  EXPECT_EQ(lines, 5751u + 1u);
  EXPECT_TRUE(fs::exists(dir / "optimum.json"));
}

TEST(Binary, NoAdherersExitsFour) {
  const auto dir = scratch("noadh");
  write_file(dir / "control.csv", "id,X1,A1,Y\n1,1,0,2\n2,2,0,3\n3,3,0,1\n4,4,0,5\n");
  const auto out = dir / "out.json";
  EXPECT_EQ(run_cli("estimate --data " + (dir / "control.csv").string() + " --regime '1:X1<=1000000' --estimator nipw",
                    out),
            4);
  EXPECT_NE(slurp(out).find("NoAdherers"), std::string::npos);
}

TEST(Binary, UnknownConfigKeyExitsTwo) {
  const auto dir = scratch("config");
  write_file(dir / "bad.cfg", "gaw.c = 0.2\ngaw.typo = 1\n");
  const auto out = dir / "out.json";
  EXPECT_EQ(run_cli("--config " + (dir / "bad.cfg").string() + " simulate --n 10", out), 2);
  EXPECT_NE(slurp(out).find("gaw.typo"), std::string::npos);
}

TEST(Binary, ConfigSuppliesValuesAndFlagsOverride) {
  const auto dir = scratch("config_ok");
  write_file(dir / "run.cfg", "run.seed = 11\nsimulate.dgp = sim2\nsimulate.n = 20\n");
  ASSERT_EQ(run_cli("--config " + (dir / "run.cfg").string() + " --out-dir " + dir.string() + " simulate", dir / "a.json"),
            0);
  EXPECT_NE(slurp(dir / "a.json").find("\"seed\": 11"), std::string::npos);
  EXPECT_NE(slurp(dir / "a.json").find("\"n\": 20"), std::string::npos);
  ASSERT_EQ(run_cli("--config " + (dir / "run.cfg").string() + " --out-dir " + dir.string() + " simulate --n 30",
                    dir / "b.json"),
            0);
  EXPECT_NE(slurp(dir / "b.json").find("\"n\": 30"), std::string::npos);
}

TEST(Binary, StudyManifestRerunIsByteIdentical) {
  const auto a = scratch("study_a");
  const auto b = scratch("study_b");
  const std::string args =
      "study --dgp sim1 --sizes 200 --replications 3 --grid psi1=300:400:50,psi2=400:500:50 "
      "--estimator nipw,ngaw --truth-mc 10000 --external-n 500";
  ASSERT_EQ(run_cli("--seed 21 --out-dir " + a.string() + " " + args, a / "stdout.json"), 0);
  ASSERT_EQ(run_cli("--out-dir " + b.string() + " study --manifest " + (a / "manifest.json").string(),
                    b / "stdout.json"),
            0);
  std::size_t compared = 0;
  for (const auto& entry : fs::directory_iterator(a)) {
    const auto name = entry.path().filename();
    if (name == "stdout.json") {
      continue;
    }
    ++compared;
    EXPECT_EQ(slurp(entry.path()), slurp(b / name)) << name;
  }
  EXPECT_GT(compared, 3u);
}

}  // namespace
}  // namespace dtr
