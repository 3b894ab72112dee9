#include "ccn/data.hpp"
#include "ccn/io.hpp"
#include "ridge.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>

#include <fmt/format.h>
#include <unistd.h>

using namespace ccn;
namespace fs = std::filesystem;

namespace {

struct TempDir
{
  fs::path path;
  TempDir()
    : path(fs::temp_directory_path() / fmt::format("ccn-data-{}-{}", ::getpid(), counter()++))
  {
    fs::create_directories(path);
  }
  ~TempDir()
  {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  static auto counter() -> int &
  {
    static int n = 0;
    return n;
  }
};

auto one_recording(Index T = 100, std::uint64_t seed = 1) -> RecordingSample
{
  SynthSpec s;
  s.n_subjects = 1;
  s.recordings_per_subject = 1;
  s.T = T;
  s.seed = seed;
  return synth_dataset(s).front();
}

auto range(int a, int b) -> std::set<int>
{
  std::set<int> s;
  for (int i = a; i <= b; ++i) { s.insert(i); }
  return s;
}

auto fake(int subject, std::string stimulus, Index T = 4) -> RecordingSample
{
  RecordingSample r;
  r.subject_id = std::to_string(subject);
  r.stimulus_id = std::move(stimulus);
  r.name = fmt::format("sub-{:03}_{}", subject, r.stimulus_id);
  r.eeg = Matrix<float>::Zero(2, T);
  r.mel = Matrix<float>::Zero(10, T);
  r.envelope = Matrix<float>::Zero(1, T);
  return r;
}

} // namespace

TEST_CASE("recording round trip is bitwise")
{
  TempDir    tmp;
  auto const rec = one_recording();
  save_recording(tmp.path / rec.name, rec);
  auto const back = load_recording(tmp.path / rec.name);
  CHECK(back.name == rec.name);
  CHECK(back.subject_id == "1");
  CHECK(back.eeg == rec.eeg);
  CHECK(back.mel == rec.mel);
  CHECK(back.envelope == rec.envelope);
  CHECK(back.time() == 100);
  CHECK(back.mel.cols() == back.envelope.cols());
  auto const m = nlohmann::json::parse(io::read_file(tmp.path / rec.name / "manifest"));
  CHECK(m.at("sample_rate_hz") == 64);
  CHECK(m.at("synth").at("lag_taps") == 4);
  CHECK(fs::file_size(tmp.path / rec.name / "eeg.raw") == 64 * 100 * 4);
}

TEST_CASE("load errors carry distinct codes")
{
  TempDir    tmp;
  auto const rec = one_recording();
  auto const dir = tmp.path / "r";
  auto       code_of = [&] {
    try {
      load_recording(dir);
    } catch (LoadError const &e) {
      return e.code;
    }
    FAIL("expected a load error");
    return LoadErrc::Io;
  };

  save_recording(dir, rec);
  // Manifest claims T=100; drop one sample from every eeg row.
  Matrix<float> short_eeg = rec.eeg.leftCols(99);
  io::write_file_atomic(dir / "eeg.raw", io::encode_f32(short_eeg));
  CHECK(code_of() == LoadErrc::LengthMismatch);

  save_recording(dir, rec);
  fs::remove(dir / "env.raw");
  CHECK(code_of() == LoadErrc::MissingFile);

  save_recording(dir, rec);
  Matrix<float> bad = rec.mel;
  bad(3, 7) = std::numeric_limits<float>::infinity();
  io::write_file_atomic(dir / "mel.raw", io::encode_f32(bad));
  CHECK(code_of() == LoadErrc::NonFinite);

  save_recording(dir, rec);
  io::write_file_atomic(dir / "manifest", "{not json");
  CHECK(code_of() == LoadErrc::BadManifest);

  fs::remove_all(dir);
  CHECK(code_of() == LoadErrc::MissingFile);
}

TEST_CASE("fuse_targets")
{
  auto const rec = one_recording(37);
  auto const fused = fuse_targets(rec.envelope, rec.mel);
  CHECK(fused.rows() == 11);
  CHECK(fused.cols() == 37);
  CHECK(fused.row(0) == rec.envelope.row(0));
  Matrix<float> const mel = fused.bottomRows(10);
  CHECK(std::memcmp(mel.data(), rec.mel.data(), sizeof(float) * static_cast<std::size_t>(mel.size())) == 0);
  CHECK_THROWS_AS(fuse_targets(rec.envelope.leftCols(36), rec.mel), ShapeError);
}

TEST_CASE("window examples")
{
  CHECK(window_count(448, 320, 64) == 3);
  auto const w = window(one_recording(448), 320, 64);
  REQUIRE(w.size() == 3);
  CHECK(w[0].start == 0);
  CHECK(w[1].start == 64);
  CHECK(w[2].start == 128);
  CHECK(w[1].eeg.rows() == 64);
  CHECK(w[1].eeg.cols() == 320);
  CHECK(w[1].target.rows() == 11);
  auto const rec = one_recording(448);
  CHECK(w[2].eeg == rec.eeg.middleCols(128, 320));

  CHECK(window(one_recording(320), 320, 64).size() == 1);
  CHECK_THROWS_AS(window(one_recording(319), 320, 64), ShapeError);
  CHECK(window(one_recording(319), 320, 64, ShortRecording::Empty).empty());
}

TEST_CASE("window count formula")
{
  auto const rec = one_recording(200);
  for (Index len = 1; len <= 200; len += 7) {
    for (Index hop = 1; hop <= 60; hop += 5) {
      auto const w = window(rec, len, hop);
      CHECK(static_cast<Index>(w.size()) == (200 - len) / hop + 1);
      CHECK(w.back().start + len <= 200);
    }
  }
}

TEST_CASE("folds")
{
  auto const folds = make_folds();
  REQUIRE(folds.size() == 4);
  CHECK(folds[0].val_subjects == range(1, 26));
  CHECK(folds[0].train_subjects == range(27, 85));
  CHECK(folds[1].val_subjects == range(27, 48));
  std::set<int> f2 = range(1, 26);
  f2.merge(range(49, 85));
  CHECK(folds[1].train_subjects == f2);
  CHECK(folds[2].val_subjects == range(49, 71));
  std::set<int> f3 = range(1, 48);
  f3.merge(range(72, 85));
  CHECK(folds[2].train_subjects == f3);
  CHECK(folds[3].val_subjects == range(72, 85));
  CHECK(folds[3].train_subjects == range(1, 71));

  std::set<int> all;
  for (auto const &f : folds) {
    CHECK(f.excluded_val_stimuli.contains("AB1"));
    std::set<int> both = f.train_subjects;
    both.merge(std::set<int>(f.val_subjects));
    CHECK(both == range(1, 85));
    for (int s : f.val_subjects) {
      CHECK_FALSE(f.train_subjects.contains(s));
      CHECK(all.insert(s).second); // validation blocks are pairwise disjoint
    }
  }
  CHECK(all == range(1, 85));
  CHECK_THROWS_AS(standard_fold(5), ConfigError);
  CHECK_THROWS_AS(standard_fold(0), ConfigError);

  nlohmann::json const j = folds[2];
  auto const           back = j.get<FoldSpec>();
  CHECK(back.train_subjects == folds[2].train_subjects);
  CHECK(back.fold_id == 3);
}

TEST_CASE("split selection")
{
  std::vector<RecordingSample> ds{fake(3, "AB1"), fake(3, "story-a"), fake(30, "AB1"), fake(30, "story-b"),
                                  fake(5, "story-b"), fake(7, "story-c"), fake(90, "story-d")};
  auto const f1 = standard_fold(1);
  auto const train = select_recordings(ds, f1, Split::Train);
  auto const val = select_recordings(ds, f1, Split::Validation);
  CHECK(train == std::vector<Index>{2, 3});
  // AB1 is excluded; story-b was heard by a training subject; subject 90 is in neither set.
  CHECK(val == std::vector<Index>{1, 5});

  for (auto const &fold : make_folds()) {
    auto const tr = select_recordings(ds, fold, Split::Train);
    for (Index i : select_recordings(ds, fold, Split::Validation)) {
      CHECK(fold.val_subjects.contains(*ds[i].subject_number()));
      CHECK_FALSE(fold.excluded_val_stimuli.contains(ds[i].stimulus_id));
      for (Index j : tr) { CHECK(ds[j].subject_id != ds[i].subject_id); }
    }
  }

  FoldSpec empty_val{9, {3}, {60}, {"AB1"}};
  CHECK_THROWS_AS(select_windows(ds, empty_val, Split::Validation, 4, 1), ConfigError);
  CHECK(select_windows(ds, empty_val, Split::Train, 4, 1).size() == 2);

  FoldSpec overlap{9, {3}, {3}, {"AB1"}};
  CHECK_THROWS_AS(overlap.validate(), ConfigError);
}

TEST_CASE("synthetic data is reproducible")
{
  SynthSpec s;
  s.n_subjects = 2;
  s.recordings_per_subject = 3;
  s.T = 128;
  s.seed = 7;
  auto const a = synth_dataset(s);
  auto const b = synth_dataset(s);
  REQUIRE(a.size() == 6);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    CHECK(a[i].eeg == b[i].eeg);
    CHECK(a[i].mel == b[i].mel);
    CHECK(a[i].envelope == b[i].envelope);
  }
  CHECK(a[0].stimulus_id == "AB1");
  CHECK(a[3].stimulus_id == "AB1");
  CHECK(a[0].mel == a[3].mel); // a shared stimulus has one mel
  CHECK(a[0].eeg != a[3].eeg); // heard through different subjects
  CHECK((a[0].mel.array() > 0).all());

  s.seed = 8;
  CHECK(synth_dataset(s)[0].eeg != a[0].eeg);

  TempDir tmp;
  save_dataset(tmp.path / "x", a);
  save_dataset(tmp.path / "y", b);
  for (auto const &r : a) {
    for (auto const *f : {"manifest", "eeg.raw", "mel.raw", "env.raw"}) {
      CHECK(io::read_file(tmp.path / "x" / r.name / f) == io::read_file(tmp.path / "y" / r.name / f));
    }
  }
  auto const loaded = load_dataset(tmp.path / "x");
  REQUIRE(loaded.size() == 6);
  CHECK(loaded[0].name == a[0].name);
}

TEST_CASE("envelope is the mel mean")
{
  auto const rec = one_recording(300, 3);
  for (Index t = 0; t < 300; ++t) {
    double m = 0;
    for (Index s = 0; s < 10; ++s) { m += rec.mel(s, t); }
    CHECK(rec.envelope(0, t) == doctest::Approx(m / 10).epsilon(1e-6));
  }
}

TEST_CASE("noise-free synthetic EEG is linearly decodable")
{
  SynthSpec s;
  s.n_subjects = 1;
  s.recordings_per_subject = 1;
  s.T = 640;
  s.snr_db = std::numeric_limits<double>::infinity();
  s.seed = 9;
  auto const rec = synth_dataset(s).front();
  auto const w = window(rec, 640, 640);
  auto const fit = ccn::testing::ridge_fit(w, 4, 1e-9);
  CHECK(ccn::testing::ridge_score(fit, w) >= 0.999);

  SynthSpec bad = s;
  bad.T = 0;
  CHECK_THROWS_AS(synth_dataset(bad), ConfigError);
  bad = s;
  bad.lag_taps = 0;
  CHECK_THROWS_AS(synth_dataset(bad), ConfigError);
}
