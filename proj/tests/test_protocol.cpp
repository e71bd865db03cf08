#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <unistd.h>

#include "fixtures.hpp"
#include "vunlearn/protocol.hpp"

using namespace vunlearn;
using namespace vunlearn::testing;
namespace fs = std::filesystem;

namespace {

struct World {
  SessionConfig config;
  std::vector<OwnerInput> owners;
  std::vector<SignKeypair> keys;
  TrainerKeys trainer = TrainerKeys::from_seed("trainer");

  World(const ModelShape& shape, const std::vector<std::size_t>& sizes, std::uint64_t seed = 1) {
    config.label = "test";
    config.model = shape;
    config.fad_slots = 6;
    std::mt19937_64 rng(seed);
    for (std::size_t o = 0; o < sizes.size(); ++o) {
      std::string name = "owner-" + std::to_string(o);
      keys.push_back(sign_keypair_from_seed(name));
      owners.push_back(OwnerInput{name, random_dataset(rng, shape, sizes[o]), keys.back().pk, random_fr(rng)});
    }
  }

  Session start() const {
    Session s = Session::create(config, owners, trainer);
    sign_registrations(s, keys);
    return s;
  }

  BitMatrix owner_mask(MaskKind kind, std::size_t owner) const {
    const auto& d = owners[owner].rows;
    std::size_t cols = kind == MaskKind::Feature ? d.x.cols : kind == MaskKind::Sample ? 1 : d.y.cols;
    return BitMatrix::identity(kind, d.rows(), cols);
  }

  SignedRequest request(const Session& s, std::size_t owner, UnlearningRequest req, std::uint64_t r = 7) const {
    return sign_request(s.record(), s.round() + 1, std::move(req), Fr::from_u64(r), keys[owner]);
  }

  SignedRequest drop_samples(const Session& s, std::size_t owner, std::vector<std::size_t> rows) const {
    BitMatrix m = owner_mask(MaskKind::Sample, owner);
    for (auto r : rows) m.bits(r, 0) = 0;
    return request(s, owner, UnlearningRequest{owners[owner].name, {}, m, {}, {}});
  }
};

RoundParams msgd(std::size_t batch, std::size_t epochs = 1, double xi = 0) {
  return RoundParams::make(Optimizer::MSGD, batch, epochs, 0.05, xi, FixedConfig{});
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("vunlearn-test-" + name + "-" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Session, OneOwnerHasOneCommitment) {
  World w(ModelShape::lr(3), {10});
  Session s = w.start();
  ASSERT_EQ(s.record().owners.size(), 1u);
  EXPECT_EQ(s.record().owners[0].begin, 0u);
  EXPECT_EQ(s.record().owners[0].end, 10u);
  EXPECT_EQ(s.round(), 0u);
  EXPECT_EQ(s.session_id().size(), 64u);
}

TEST(Session, TwoOwnersGetDisjointRanges) {
  World w(ModelShape::lr(3), {6, 9});
  Session s = w.start();
  const auto& o = s.record().owners;
  ASSERT_EQ(o.size(), 2u);
  EXPECT_EQ(o[0].end, o[1].begin);
  EXPECT_EQ(o[1].end, 15u);
  EXPECT_NE(o[0].commitment, o[1].commitment);
}

TEST(Session, InitIsDeterministic) {
  World w(ModelShape::lr(3), {6, 9});
  Session a = w.start(), b = w.start();
  EXPECT_EQ(a.session_id(), b.session_id());
  EXPECT_EQ(a.record().dataset_root, b.record().dataset_root);
  EXPECT_EQ(a.record().initial_model, b.record().initial_model);

  World other = w;
  other.trainer = TrainerKeys::from_seed("another trainer");
  EXPECT_NE(other.start().session_id(), a.session_id());
}

TEST(Session, RegistrationNeedsEverySignature) {
  World w(ModelShape::lr(3), {6, 9});
  Session s = Session::create(w.config, w.owners, w.trainer);
  expect_errc([&] { s.run_round(msgd(5)); }, Errc::MissingSignature);
  expect_errc([&] { s.register_signature("owner-0", sign_message(w.keys[1], s.registration_for("owner-0"))); },
              Errc::BadSignature);
  expect_errc([&] { s.register_signature("nobody", {}); }, Errc::UnknownOwner);
}

TEST(Session, RejectsBadRequests) {
  World w(ModelShape::lr(3), {6, 9});
  Session s = w.start();

  BitMatrix wrong_rows = BitMatrix::identity(MaskKind::Sample, 5, 1);
  expect_errc([&] { s.submit(w.request(s, 0, UnlearningRequest{"owner-0", {}, wrong_rows, {}, {}})); },
              Errc::DimMismatch);

  auto stranger = w.drop_samples(s, 0, {1});
  stranger.request.owner = "owner-9";
  expect_errc([&] { s.submit(stranger); }, Errc::UnknownOwner);

  auto forged = w.drop_samples(s, 0, {1});
  forged.signature = sign_message(w.keys[1], request_message(s.session_id(), "owner-0", 1, forged.root));
  expect_errc([&] { s.submit(forged); }, Errc::BadSignature);

  auto swapped = w.drop_samples(s, 0, {1});
  swapped.request.sample->bits(2, 0) = 0;  // masks no longer match the signed root
  expect_errc([&] { s.submit(swapped); }, Errc::BadSignature);

  auto late = w.drop_samples(s, 0, {1});
  late.round = 2;
  expect_errc([&] { s.submit(late); }, Errc::RoundSkew);

  s.submit(w.drop_samples(s, 0, {1}));
  EXPECT_EQ(s.pending_requests(), 1u);
  expect_errc([&] { s.submit(w.drop_samples(s, 0, {2})); }, Errc::OverlappingRows);
}

TEST(Session, HonestRoundsVerify) {
  World w(ModelShape::lr(3), {8, 12});
  Session s = w.start();
  s.submit(w.drop_samples(s, 1, {0, 5}));
  const auto& r1 = s.run_round(msgd(6));
  EXPECT_EQ(r1.steps.size(), 4u);  // ceil(20 / 6)
  EXPECT_EQ(r1.schedules.size(), 1u);
  auto rep = verify_transcript(s.transcript(), w.trainer.audit);
  EXPECT_TRUE(rep.ok) << rep.stage << ": " << rep.reason;
  EXPECT_EQ(rep.proofs, 1u + 2 * 4);

  s.run_round(RoundParams::make(Optimizer::SGD, 1, 1, 0.05, 0, FixedConfig{}));
  rep = verify_transcript(s.transcript(), w.trainer.audit);
  EXPECT_TRUE(rep.ok) << rep.stage << ": " << rep.reason;
  EXPECT_EQ(rep.rounds, 2u);

  auto other = TrainerKeys::from_seed("other").audit;
  EXPECT_FALSE(verify_transcript(s.transcript(), other).ok);
}

TEST(Session, NoRequestsMeansPlainTraining) {
  World w(ModelShape::lr(3), {10});
  Session s = w.start();
  auto p = s.params();
  const auto& r = s.run_round(msgd(4));
  for (const auto& sc : r.schedules) {
    for (const auto& b : sc.batches) {
      std::vector<std::size_t> rows(b.begin(), b.end());
      p = fixed_step(s.data(), nullptr, p, r.params.eta_raw, rows).next;
    }
  }
  EXPECT_EQ(s.params(), p);
  EXPECT_TRUE(verify_transcript(s.transcript(), w.trainer.audit).ok);
}

TEST(Session, FullBatchDeletionMatchesRetraining) {
  World w(ModelShape::lr(3), {7, 9});
  Session s = w.start();
  auto p = s.params();
  s.submit(w.drop_samples(s, 0, {2, 3}));
  s.submit(w.drop_samples(s, 1, {8}));
  auto params = RoundParams::make(Optimizer::BGD, 0, 3, 0.1, 0, FixedConfig{});
  s.run_round(params);

  // Oracle: delete the rows outright and train without masks.
  const auto& d = s.data();
  auto [xy, keep] = reduce_dataset(d.x, d.y, s.masks(), false);
  EXPECT_EQ(keep.size(), 13u);
  FixedDataset reduced{d.cfg, d.kind, xy.first, xy.second, single_owner_layout(keep.size(), 3, 1)};
  for (int e = 0; e < 3; ++e) p = fixed_step(reduced, nullptr, p, params.eta_raw, all_rows(keep.size())).next;
  EXPECT_EQ(s.params(), p);
  EXPECT_TRUE(verify_transcript(s.transcript(), w.trainer.audit).ok);
}

TEST(Session, PlantedReplicaIsFlagged) {
  World w(ModelShape::lr(3), {12});
  auto& d = w.owners[0].rows;
  for (std::size_t j = 0; j < 3; ++j) d.x(9, j) = d.x(4, j);
  d.y(9, 0) = d.y(4, 0);
  Session s = w.start();
  s.submit(w.drop_samples(s, 0, {4}));
  const auto& r = s.run_round(msgd(5));

  std::size_t raised = 0;
  for (std::size_t k = 0; k < r.steps.size(); ++k) {
    const auto& batch = r.schedules[0].batches[k];
    std::vector<std::size_t> rows(batch.begin(), batch.end());
    for (std::size_t m = 0; m < rows.size(); ++m) {
      EXPECT_EQ(r.steps[k].flags[m], rows[m] == 9 ? 1 : 0) << "row " << rows[m];
      raised += r.steps[k].flags[m];
    }
  }
  EXPECT_EQ(raised, 1u);
  auto rep = verify_transcript(s.transcript(), w.trainer.audit);
  EXPECT_TRUE(rep.ok);
  EXPECT_EQ(rep.flagged, 1u);
}

TEST(Session, RemovedStepFailsAtChainGap) {
  World w(ModelShape::lr(3), {10});
  Session s = w.start();
  s.run_round(msgd(4));
  Transcript t = s.transcript();
  t.rounds[0].steps.pop_back();
  t.rounds[0].step_proofs.pop_back();
  t.rounds[0].fad_proofs.pop_back();
  auto rep = verify_transcript(t, w.trainer.audit);
  EXPECT_FALSE(rep.ok);
  EXPECT_EQ(rep.stage, "model-chain");
}

TEST(Session, SubstitutedScheduleFailsReplay) {
  World w(ModelShape::lr(3), {10});
  Session s = w.start();
  s.run_round(msgd(4));
  Transcript t = s.transcript();
  auto& b = t.rounds[0].schedules[0].batches;
  std::swap(b[0][0], b[1][0]);
  auto rep = verify_transcript(t, w.trainer.audit);
  EXPECT_FALSE(rep.ok);
  EXPECT_EQ(rep.stage, "schedule");
}

TEST(Session, RejectsWhenEveryRowIsGone) {
  World w(ModelShape::lr(2), {3});
  w.config.fad_slots = 3;
  Session s = w.start();
  s.submit(w.drop_samples(s, 0, {0, 1, 2}));
  expect_errc([&] { s.run_round(msgd(2)); }, Errc::EmptyEffectiveSet);
  EXPECT_EQ(s.round(), 0u);
}

TEST(Session, SaveLoadContinues) {
  auto dir = temp_dir("persist");
  World w(ModelShape::lr(3), {6, 6});
  {
    Session s = w.start();
    s.submit(w.drop_samples(s, 0, {1}));
    s.run_round(msgd(4));
    s.save(dir / "transcript", dir / "trainer.state");
  }
  Session s = Session::load(dir / "transcript", dir / "trainer.state", w.trainer);
  EXPECT_EQ(s.round(), 1u);
  s.submit(w.drop_samples(s, 1, {3}));
  s.run_round(msgd(4));
  s.save(dir / "transcript", dir / "trainer.state");
  auto rep = verify_transcript_dir(dir / "transcript", w.trainer.audit);
  EXPECT_TRUE(rep.ok) << rep.stage << ": " << rep.reason;
  EXPECT_EQ(rep.rounds, 2u);

  expect_errc([&] { Session::load(dir / "transcript", dir / "trainer.state", TrainerKeys::from_seed("x")); },
              Errc::MalformedKey);
  fs::remove_all(dir);
}

// ---------------------------------------------------------------------------
// Soundness: ten single-field mutations of an honest transcript.

namespace {

struct Honest {
  World world{ModelShape::lr(3), {8, 8}, 3};
  Transcript transcript;

  Transcript run(const Adversary& adv = {}) const {
    Session s = world.start();
    s.submit(world.drop_samples(s, 0, {2}));
    s.run_round(msgd(6));
    s.submit(world.drop_samples(s, 1, {5}));
    s.run_round(msgd(6), adv);
    return s.transcript();
  }
};

const Honest& honest() {
  static Honest h = [] {
    Honest x;
    x.transcript = x.run();
    return x;
  }();
  return h;
}

void expect_rejected(const Transcript& t, const std::string& stage) {
  auto rep = verify_transcript(t, honest().world.trainer.audit);
  EXPECT_FALSE(rep.ok);
  EXPECT_EQ(rep.stage, stage) << rep.locus << ": " << rep.reason;
}

}  // namespace

TEST(Soundness, HonestBaselineVerifies) {
  auto rep = verify_transcript(honest().transcript, honest().world.trainer.audit);
  EXPECT_TRUE(rep.ok) << rep.stage << ": " << rep.reason;
}

TEST(Soundness, DatasetEntry) {
  expect_rejected(honest().run({Tamper::DatasetEntry, ProofKind::Step, 2}), "proofs");
}

TEST(Soundness, MaskBit) {
  expect_rejected(honest().run({Tamper::MaskBit, ProofKind::MaskUpdate, 0}), "proofs");
}

TEST(Soundness, LearningRate) {
  expect_rejected(honest().run({Tamper::WrongEta, ProofKind::Step, 1}), "proofs");
}

TEST(Soundness, EffectiveCount) {
  expect_rejected(honest().run({Tamper::WrongCount, ProofKind::Step, 3}), "proofs");
}

TEST(Soundness, ScheduleIndex) {
  Transcript t = honest().transcript;
  auto& b = t.rounds[1].schedules[0].batches;
  std::swap(b[0][1], b.back()[0]);
  expect_rejected(t, "schedule");
}

TEST(Soundness, ModelCommitment) {
  Transcript t = honest().transcript;
  t.rounds[0].steps[1].model_out += Fr::one();
  expect_rejected(t, "proofs");
}

TEST(Soundness, ProofBytes) {
  Transcript t = honest().transcript;
  auto& p = t.rounds[1].step_proofs[0];
  p[p.size() / 2] ^= 0x01;
  expect_rejected(t, "proofs");
}

TEST(Soundness, RoundLink) {
  Transcript t = honest().transcript;
  t.rounds[1].prev_mask = t.rounds[0].prev_mask;
  expect_rejected(t, "mask-chain");
}

TEST(Soundness, Signature) {
  Transcript t = honest().transcript;
  (*t.rounds[0].requests[0].signature)[3] ^= 0x20;
  expect_rejected(t, "signatures");
}

TEST(Soundness, CircuitDigest) {
  Transcript t = honest().transcript;
  auto& d = t.session.circuits.begin()->second;
  d[0] = d[0] == '0' ? '1' : '0';
  expect_rejected(t, "circuits");
}

TEST(Soundness, FlippedByteOnDisk) {
  auto dir = temp_dir("flip");
  honest().transcript.save(dir);
  ASSERT_TRUE(verify_transcript_dir(dir, honest().world.trainer.audit).ok);
  auto file = dir / "round-2" / "fad-1.proof";
  Bytes b = read_file(file);
  b[b.size() - 9] ^= 0x80;
  write_file_atomic(file, b);
  auto rep = verify_transcript_dir(dir, honest().world.trainer.audit);
  EXPECT_FALSE(rep.ok);
  EXPECT_EQ(rep.locus, "round 2 step 1 fad");
  fs::remove_all(dir);
}

// ---------------------------------------------------------------------------

TEST(Accumulation, TwoRoundsEqualOneCombinedRound) {
  World w(ModelShape::nn(3, 2, 2), {6, 6}, 5);
  auto feature = [&](std::size_t row, std::size_t col) {
    BitMatrix m = w.owner_mask(MaskKind::Feature, 0);
    m.bits(row, col) = 0;
    return m;
  };
  auto klass = [&](std::vector<std::pair<std::size_t, std::size_t>> bits) {
    BitMatrix m = w.owner_mask(MaskKind::Class, 0);
    for (auto [r, c] : bits) m.bits(r, c) = 1;
    return m;
  };
  BitMatrix f1 = feature(1, 0), f2 = feature(3, 2);
  BitMatrix c1 = klass({{0, 1}, {2, 0}}), c2 = klass({{0, 1}, {4, 1}});
  BitMatrix s2 = w.owner_mask(MaskKind::Sample, 0);
  s2.bits(5, 0) = 0;

  Session two = w.start();
  two.submit(w.request(two, 0, UnlearningRequest{"owner-0", f1, {}, c1, {}}));
  two.run_round(msgd(4));
  two.submit(w.request(two, 0, UnlearningRequest{"owner-0", f2, s2, c2, {}}));
  two.run_round(msgd(4));

  BitMatrix f12 = f1, c12 = c1;
  for (std::size_t i = 0; i < f12.bits.data.size(); ++i) f12.bits.data[i] &= f2.bits.data[i];
  for (std::size_t i = 0; i < c12.bits.data.size(); ++i) c12.bits.data[i] ^= c2.bits.data[i];
  Session one = w.start();
  one.submit(w.request(one, 0, UnlearningRequest{"owner-0", f12, s2, c12, {}}));
  one.run_round(msgd(4));

  EXPECT_EQ(two.masks().feature.bits, one.masks().feature.bits);
  EXPECT_EQ(two.masks().sample.bits, one.masks().sample.bits);
  EXPECT_EQ(two.masks().klass.bits, one.masks().klass.bits);
  const auto& d = two.data();
  auto a = reduce_dataset(d.x, d.y, two.masks(), true);
  auto b = reduce_dataset(d.x, d.y, one.masks(), true);
  EXPECT_EQ(a, b);
  EXPECT_TRUE(verify_transcript(two.transcript(), w.trainer.audit).ok);
}

TEST(Privacy, TranscriptCarriesNoPrivateMaterial) {
  auto dir = temp_dir("privacy");
  World w(ModelShape::nn(3, 2, 2), {7, 7}, 9);
  Session s = w.start();
  BitMatrix f = w.owner_mask(MaskKind::Feature, 0);
  f.bits(2, 1) = 0;
  s.submit(w.request(s, 0, UnlearningRequest{"owner-0", f, {}, {}, {}}));
  s.run_round(msgd(5));
  s.submit(w.drop_samples(s, 1, {0, 6}));
  s.run_round(msgd(5));
  BitMatrix c = w.owner_mask(MaskKind::Class, 1);
  c.bits(3, 0) = 1;
  s.submit(w.request(s, 1, UnlearningRequest{"owner-1", {}, {}, c, {}}));
  s.run_round(msgd(5));
  s.save(dir / "transcript", dir / "trainer.state");

  auto findings = s.privacy_scan(dir / "transcript");
  EXPECT_TRUE(findings.empty()) << findings.front();
  EXPECT_TRUE(verify_transcript_dir(dir / "transcript", w.trainer.audit).ok);

  // The scanner itself finds a planted value.
  std::size_t row = 0;
  while (std::llabs(s.data().x(row, 0)) < 4096) ++row;
  std::ofstream(dir / "transcript" / "leak.json") << "{\"note\": " << s.data().x(row, 0) << "}\n";
  findings = s.privacy_scan(dir / "transcript");
  ASSERT_EQ(findings.size(), 1u) << ::testing::PrintToString(findings);
  EXPECT_NE(findings[0].find("feature value of row " + std::to_string(row)), std::string::npos);
  fs::remove_all(dir);
}
