// vunlearn: trainer, owner and auditor front end.
//
// Work directory written by commit-dataset:
//   config.json         resolved configuration
//   transcript/         public record handed to auditors
//   trainer.state       sealed private state
//   trainer.key         trainer secret (hex)
//   audit.key           proof-opening key shared with auditors (hex)
//   owners/<name>.key   owner signing seeds (hex)
//   requests/           signed request records, public
//
// Exit codes: 0 ok, 1 verification failure, 2 usage, 3 data error, 4 internal.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "vunlearn/forgery.hpp"
#include "vunlearn/protocol.hpp"

using namespace vunlearn;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kVerifyFailed = 1, kUsage = 2, kDataError = 3, kInternal = 4 };

bool g_json = false;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void emit(const Json& j, const std::string& text) {
  if (g_json) {
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << text;
  }
}

std::string rows(std::initializer_list<std::pair<std::string, std::string>> kv) {
  std::size_t w = 0;
  for (const auto& [k, v] : kv) w = std::max(w, k.size());
  std::ostringstream os;
  for (const auto& [k, v] : kv) os << k << std::string(w + 2 - k.size(), ' ') << v << "\n";
  return os.str();
}

std::string read_text(const fs::path& p) {
  Bytes b = read_file(p);
  std::string s(b.begin(), b.end());
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r' || s.back() == ' ')) s.pop_back();
  return s;
}

void write_text(const fs::path& p, const std::string& s) {
  std::string line = s + "\n";
  write_file_atomic(p, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(line.data()), line.size()));
}

Fr wide_fr(std::string_view tag, std::string_view a, std::uint64_t b = 0) {
  ByteWriter w;
  w.str(tag);
  w.str(a);
  w.u64(b);
  return Fr::from_bytes_wide(sha512(w.buf));
}

std::vector<std::size_t> parse_index_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (cell.empty()) continue;
    try {
      std::size_t used = 0;
      unsigned long long v = std::stoull(cell, &used);
      if (used != cell.size()) throw std::invalid_argument(cell);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw UsageError("'" + cell + "' is not a row index");
    }
  }
  return out;
}

Json index_json(std::span<const std::size_t> v) { return Json(std::vector<std::size_t>(v.begin(), v.end())); }

std::string index_text(std::span<const std::size_t> v) {
  std::string s;
  for (auto i : v) s += (s.empty() ? "" : ",") + std::to_string(i);
  return s;
}

// ---------------------------------------------------------------------------
// Work directory.

struct Work {
  fs::path dir;
  Json config;
  TrainerKeys keys;

  static Work open(const fs::path& dir) {
    require(fs::exists(dir / "config.json"), Errc::Io, dir.string() + " is not a vunlearn work directory");
    Work w{dir, read_json_file(dir / "config.json"), {}};
    w.keys = TrainerKeys::from_secret(hex_array<32>(read_text(dir / "trainer.key")));
    return w;
  }

  fs::path transcript() const { return dir / "transcript"; }
  fs::path state() const { return dir / "trainer.state"; }

  Session load() const { return Session::load(transcript(), state(), keys); }
  void save(const Session& s) const { s.save(transcript(), state()); }

  SignKeypair owner_key(const std::string& name) const {
    auto p = dir / "owners" / (name + ".key");
    require(fs::exists(p), Errc::UnknownOwner, "no signing key for owner '" + name + "'");
    return sign_keypair_from_seed(read_text(p));
  }
};

// ---------------------------------------------------------------------------

struct CommitOpts {
  std::string csv, out, model = "lr", label = "vunlearn", seed = "vunlearn", owner_seed;
  std::size_t hidden = 4, fad_slots = 8;
  double init_scale = 0.5;
  unsigned scale_bits = 16, range_bits = 64;
};

int cmd_commit(const CommitOpts& o) {
  fs::path out(o.out);
  require(!fs::exists(out / "config.json"), Errc::Io, out.string() + " already holds a session");
  CsvTable t = read_csv_file(o.csv);
  SessionConfig cfg;
  cfg.label = o.label;
  cfg.fixed = FixedConfig{o.scale_bits, o.range_bits};
  cfg.model = parse_model_kind(o.model) == ModelKind::LR
                  ? ModelShape::lr(t.layout.num_features)
                  : ModelShape::nn(t.layout.num_features, o.hidden, t.layout.num_labels);
  require(cfg.model.label_cols() == t.layout.num_labels, Errc::DimMismatch,
          "linear regression takes one label column, the CSV has " + std::to_string(t.layout.num_labels));
  cfg.fad_slots = o.fad_slots;
  cfg.init_scale = o.init_scale;

  const std::string owner_seed = o.owner_seed.empty() ? o.seed + "/owners" : o.owner_seed;
  std::vector<OwnerInput> owners;
  std::vector<SignKeypair> okeys;
  std::vector<std::string> oseeds;
  for (const auto& r : t.layout.owners) {
    Dataset d{Matrix<double>(r.size(), t.layout.num_features), Matrix<double>(r.size(), t.layout.num_labels)};
    for (std::size_t i = 0; i < r.size(); ++i) {
      for (std::size_t j = 0; j < d.x.cols; ++j) d.x(i, j) = t.data.x(r.begin + i, j);
      for (std::size_t k = 0; k < d.y.cols; ++k) d.y(i, k) = t.data.y(r.begin + i, k);
    }
    oseeds.push_back(to_hex(sha256(owner_seed + "|" + r.owner)));
    okeys.push_back(sign_keypair_from_seed(oseeds.back()));
    owners.push_back(OwnerInput{r.owner, std::move(d), okeys.back().pk, wide_fr("vunlearn-owner-blind", oseeds.back())});
  }
  Digest secret = sha256(std::string("vunlearn-trainer-seed|") + o.seed);
  TrainerKeys keys = TrainerKeys::from_secret(secret);
  Session s = Session::create(cfg, owners, keys);
  sign_registrations(s, okeys);

  fs::create_directories(out / "owners");
  fs::create_directories(out / "requests");
  Json config{{"session", cfg.to_json()},
              {"source", fs::path(o.csv).filename().string()},
              {"owners", Json::array()}};
  for (std::size_t i = 0; i < owners.size(); ++i) {
    config["owners"].push_back(owners[i].name);
    write_text(out / "owners" / (owners[i].name + ".key"), oseeds[i]);
  }
  write_json_atomic(out / "config.json", config);
  write_text(out / "trainer.key", to_hex(secret));
  write_text(out / "audit.key", to_hex(keys.audit));
  s.save(out / "transcript", out / "trainer.state");

  const auto& rec = s.record();
  Json j{{"session_id", rec.session_id},
         {"dataset_root", fr_to_json(rec.dataset_root)},
         {"initial_model", fr_to_json(rec.initial_model)},
         {"owners", Json::array()}};
  std::string text = rows({{"session", rec.session_id},
                           {"dataset root", fr_to_json(rec.dataset_root)},
                           {"initial model", fr_to_json(rec.initial_model)}});
  for (const auto& ow : rec.owners) {
    j["owners"].push_back(
        {{"name", ow.name}, {"rows", ow.end - ow.begin}, {"commitment", fr_to_json(ow.commitment)}});
    text += "owner " + ow.name + "  rows " + std::to_string(ow.begin) + ".." + std::to_string(ow.end) +
            "  commitment " + fr_to_json(ow.commitment) + "\n";
  }
  emit(j, text);
  return kOk;
}

// ---------------------------------------------------------------------------

BitMatrix read_mask_csv(const fs::path& p, MaskKind kind, std::size_t rows, std::size_t cols) {
  std::ifstream in(p);
  require(static_cast<bool>(in), Errc::Io, "cannot open " + p.string());
  BitMatrix m = BitMatrix::identity(kind, rows, cols);
  std::string line;
  std::size_t r = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    require(r < rows, Errc::DimMismatch, p.filename().string() + " has more than " + std::to_string(rows) + " rows");
    std::stringstream ss(line);
    std::string cell;
    std::size_t c = 0;
    while (std::getline(ss, cell, ',')) {
      auto b = cell.find_first_not_of(" \t\r");
      auto e = cell.find_last_not_of(" \t\r");
      cell = b == std::string::npos ? "" : cell.substr(b, e - b + 1);
      require(cell == "0" || cell == "1", Errc::Parse, p.filename().string() + ": mask entries must be 0 or 1");
      require(c < cols, Errc::DimMismatch, p.filename().string() + " row " + std::to_string(r + 1) + " has more than " +
                                               std::to_string(cols) + " columns");
      m.bits(r, c++) = cell == "1";
    }
    require(c == cols, Errc::DimMismatch, p.filename().string() + " row " + std::to_string(r + 1) + " has " +
                                              std::to_string(c) + " columns, expected " + std::to_string(cols));
    ++r;
  }
  require(r == rows, Errc::DimMismatch,
          p.filename().string() + " has " + std::to_string(r) + " rows, owner has " + std::to_string(rows));
  return m;
}

int cmd_request(const std::string& dir, const std::string& owner, const std::vector<std::string>& kinds,
                const std::vector<std::string>& masks) {
  if (kinds.size() != masks.size() || kinds.empty()) throw UsageError("give one --mask per --kind");
  Work w = Work::open(dir);
  Session s = w.load();
  DatasetLayout layout = s.layout();
  const OwnerRange& range = layout.owner(owner);
  UnlearningRequest req{owner, {}, {}, {}, {}};
  for (std::size_t i = 0; i < kinds.size(); ++i) {
    MaskKind kind = kinds[i] == "feature" ? MaskKind::Feature
                    : kinds[i] == "sample" ? MaskKind::Sample
                    : kinds[i] == "class"  ? MaskKind::Class
                                           : throw UsageError("--kind must be feature, sample or class");
    if (kind == MaskKind::Class && s.record().config.model.kind != ModelKind::NN) {
      throw UsageError("class masks apply to classification models only");
    }
    if (req.mask(kind)) throw UsageError("--kind " + kinds[i] + " given twice");
    req.mask(kind) = read_mask_csv(masks[i], kind, range.size(), layout.cols_for(kind));
  }
  const std::uint32_t round = s.round() + 1;
  Fr r = wide_fr("vunlearn-request-blind", read_text(w.dir / "owners" / (owner + ".key")), round);
  SignedRequest sr = sign_request(s.record(), round, std::move(req), r, w.owner_key(owner));
  s.submit(sr);
  w.save(s);

  Json j{{"round", round}, {"owner", owner}, {"kinds", kinds}, {"root", fr_to_json(sr.root)},
         {"signature", to_hex(sr.signature)}};
  fs::create_directories(w.dir / "requests");
  write_json_atomic(w.dir / "requests" / ("round-" + std::to_string(round) + "-" + owner + ".json"), j);
  std::string ks;
  for (const auto& k : kinds) ks += (ks.empty() ? "" : ",") + k;
  emit(j, rows({{"round", std::to_string(round)},
                {"owner", owner},
                {"kinds", ks},
                {"commitment", fr_to_json(sr.root)},
                {"signature", to_hex(sr.signature)}}));
  return kOk;
}

// ---------------------------------------------------------------------------

struct RetrainOpts {
  std::string dir, optimizer = "msgd";
  std::size_t epochs = 1, batch = 10;
  double eta = 0.05, xi = 0;
};

int cmd_retrain(const RetrainOpts& o) {
  Work w = Work::open(o.dir);
  Session s = w.load();
  auto params = RoundParams::make(parse_optimizer(o.optimizer), o.batch, o.epochs, o.eta, o.xi,
                                  s.record().config.fixed);
  std::size_t requests = s.pending_requests();
  const RoundRecord& r = s.run_round(params);
  w.save(s);
  std::size_t flags = 0;
  for (const auto& st : r.steps) {
    for (auto f : st.flags) flags += f;
  }
  Fr model = r.steps.empty() ? s.record().initial_model : r.steps.back().model_out;
  Json j{{"round", r.round},        {"optimizer", to_string(params.optimizer)},
         {"epochs", params.epochs}, {"steps", r.steps.size()},
         {"requests", requests},    {"fad_flags_raised", flags},
         {"mask_commitment", fr_to_json(r.next_mask)}, {"model_commitment", fr_to_json(model)}};
  emit(j, rows({{"round", std::to_string(r.round)},
                {"optimizer", to_string(params.optimizer)},
                {"steps", std::to_string(r.steps.size())},
                {"requests", std::to_string(requests)},
                {"fad flags", std::to_string(flags)},
                {"mask commitment", fr_to_json(r.next_mask)},
                {"model commitment", fr_to_json(model)}}));
  return kOk;
}

// ---------------------------------------------------------------------------

int cmd_verify(const std::string& dir, std::string key_path) {
  fs::path d(dir);
  if (key_path.empty()) key_path = (d.parent_path() / "audit.key").string();
  AuditKey key = hex_array<32>(read_text(key_path));
  VerifyReport rep = verify_transcript_dir(d, key);
  std::string text = rep.ok ? rows({{"result", "ok"},
                                    {"rounds", std::to_string(rep.rounds)},
                                    {"proofs", std::to_string(rep.proofs)},
                                    {"fad flags", std::to_string(rep.flagged)}})
                            : rows({{"result", "FAILED"},
                                    {"stage", rep.stage},
                                    {"locus", rep.locus},
                                    {"reason", rep.reason}});
  emit(rep.to_json(), text);
  return rep.ok ? kOk : kVerifyFailed;
}

// ---------------------------------------------------------------------------

int cmd_fad(const std::string& dir, double xi) {
  Work w = Work::open(dir);
  Session s = w.load();
  const auto& d = s.data();
  u128 xi_sq = fixed_threshold_sq(xi, d.cfg);
  auto gate = s.masks().row_gate();
  std::vector<std::size_t> unlearned, kept;
  for (std::size_t i = 0; i < gate.size(); ++i) (gate[i] ? kept : unlearned).push_back(i);
  Json flagged = Json::array();
  char xs[32];
  std::snprintf(xs, sizeof xs, "%g", xi);
  std::string text = rows({{"xi", xs},
                           {"unlearned rows", std::to_string(unlearned.size())},
                           {"retained rows", std::to_string(kept.size())}});
  std::size_t count = 0;
  for (auto m : kept) {
    std::vector<std::size_t> hits;
    for (auto u : unlearned) {
      std::size_t one[1] = {m};
      if (detect_replicas(d, one, u, xi_sq, s.params())[0]) hits.push_back(u);
    }
    if (hits.empty()) continue;
    ++count;
    flagged.push_back({{"row", m}, {"replicates", index_json(hits)}});
    text += "row " + std::to_string(m) + " replicates " + index_text(hits) + "\n";
  }
  if (count == 0) text += "no replicas\n";
  emit(Json{{"xi", xi}, {"unlearned", unlearned.size()}, {"retained", kept.size()}, {"flagged", flagged}}, text);
  return kOk;
}

// ---------------------------------------------------------------------------

struct AttackOpts {
  std::string method, csv, unlearned, target, model = "lr";
  std::size_t size = 0, budget = 1000, hidden = 4;
  std::uint64_t seed = 1;
  double param_scale = 0.5;
};

int cmd_attack(const AttackOpts& o) {
  CsvTable t = read_csv_file(o.csv);
  ModelShape shape = parse_model_kind(o.model) == ModelKind::LR
                         ? ModelShape::lr(t.layout.num_features)
                         : ModelShape::nn(t.layout.num_features, o.hidden, t.layout.num_labels);
  require(shape.label_cols() == t.layout.num_labels, Errc::DimMismatch, "label columns do not match the model");
  std::mt19937_64 rng(o.seed);
  auto p = Params<double>::zeros(shape);
  std::uniform_real_distribution<double> u(-o.param_scale, o.param_scale);
  for (auto& v : p.values) v = u(rng);
  auto U = parse_index_list(o.unlearned);
  auto target = parse_index_list(o.target);

  ForgeryInstance best;
  Json extra = Json::object();
  if (o.method == "random") {
    auto r = attack_random_sampling(t.data, p, U, target, o.size ? o.size : target.size(), o.budget, rng);
    best = r.best;
    double mean = 0;
    for (double e : r.trace) mean += e;
    extra = {{"budget", o.budget}, {"mean_epsilon", mean / static_cast<double>(r.trace.size())}};
  } else if (o.method == "neighbor") {
    best = attack_neighbor_replacement(t.data, p, U, target);
  } else {
    throw UsageError("attack method must be random or neighbor");
  }
  Json j{{"method", o.method},
         {"unlearned", index_json(best.unlearned)},
         {"target", index_json(best.target)},
         {"forging", index_json(best.forging)},
         {"epsilon", best.epsilon}};
  j.update(extra);
  char eps[64];
  std::snprintf(eps, sizeof eps, "%.6e", best.epsilon);
  emit(j, rows({{"method", o.method},
                {"target", index_text(best.target)},
                {"forging", index_text(best.forging)},
                {"epsilon", eps}}));
  return kOk;
}

// ---------------------------------------------------------------------------

int cmd_spaces(std::uint64_t d, std::uint64_t u, std::uint64_t b) {
  auto r = search_space_sizes(d, u, b);
  Json j{{"dataset", r.dataset},
         {"unlearned", r.unlearned},
         {"batch", r.batch},
         {"forging_space", r.forging_sci()},
         {"target_space", r.target_sci()},
         {"sampled_space", r.reduced.str()},
         {"forging_space_exact", r.forging.str()},
         {"target_space_exact", r.target.str()}};
  emit(j, rows({{"|D|", std::to_string(d)},
                {"|U|", std::to_string(u)},
                {"|d~|", std::to_string(b)},
                {"forging space", r.forging_sci()},
                {"target space", r.target_sci()},
                {"with sampling", r.reduced.str()}}));
  return kOk;
}

int report_error(const std::string& kind, const std::string& msg, int code) {
  if (g_json) {
    std::cout << Json{{"error", {{"class", kind}, {"message", msg}, {"exit_code", code}}}}.dump(2) << "\n";
  } else {
    std::cerr << "vunlearn: " << msg << "\n";
  }
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Verifiable machine unlearning: commitments, proven retraining and auditing."};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_flag("--json", g_json, "Machine-readable output");

  CommitOpts co;
  auto* commit = app.add_subcommand("commit-dataset", "Commit a CSV dataset and open a session");
  commit->add_option("csv", co.csv, "Dataset CSV (feature columns, y*/label* columns, optional owner column)")
      ->required()
      ->check(CLI::ExistingFile);
  commit->add_option("--out,-o", co.out, "Work directory to create")->required();
  commit->add_option("--model", co.model, "lr or nn")->check(CLI::IsMember({"lr", "nn"}));
  commit->add_option("--hidden", co.hidden, "Hidden units for nn");
  commit->add_option("--seed", co.seed, "Trainer seed");
  commit->add_option("--owner-seed", co.owner_seed, "Seed for owner signing keys");
  commit->add_option("--label", co.label, "Session label");
  commit->add_option("--fad-slots", co.fad_slots, "Capacity for unlearned rows in detection proofs");
  commit->add_option("--init-scale", co.init_scale, "Initial parameters uniform in [-s, s]");
  commit->add_option("--scale-bits", co.scale_bits, "Fractional bits");
  commit->add_option("--range-bits", co.range_bits, "Signed range bits");

  std::string req_dir, req_owner;
  std::vector<std::string> req_kinds, req_masks;
  auto* request = app.add_subcommand("request-unlearn", "Sign and submit an owner's unlearning request");
  request->add_option("workdir", req_dir, "Work directory")->required();
  request->add_option("--owner", req_owner, "Requesting owner")->required();
  request->add_option("--kind", req_kinds, "feature, sample or class; repeatable")->required();
  request->add_option("--mask", req_masks, "0/1 CSV over the owner's rows, 1 keeps; repeatable")->required();

  RetrainOpts ro;
  auto* retrain = app.add_subcommand("retrain", "Run one proven unlearning round");
  retrain->add_option("workdir", ro.dir, "Work directory")->required();
  retrain->add_option("--optimizer", ro.optimizer, "bgd, sgd or msgd")->check(CLI::IsMember({"bgd", "sgd", "msgd"}));
  retrain->add_option("--epochs", ro.epochs, "Epochs");
  retrain->add_option("--batch", ro.batch, "Minibatch size for msgd");
  retrain->add_option("--eta", ro.eta, "Learning rate");
  retrain->add_option("--xi", ro.xi, "Replica detection threshold");

  std::string ver_dir, ver_key;
  auto* verify = app.add_subcommand("verify", "Audit a transcript directory");
  verify->add_option("transcript", ver_dir, "Transcript directory")->required();
  verify->add_option("--audit-key", ver_key, "Audit key file (default: ../audit.key)");

  std::string fad_dir;
  double fad_xi = 0;
  auto* fad = app.add_subcommand("fad", "Plain replica detection over the trainer's current state");
  fad->add_option("workdir", fad_dir, "Work directory")->required();
  fad->add_option("--xi", fad_xi, "Gradient distance threshold");

  AttackOpts ao;
  auto* attack = app.add_subcommand("attack", "Run a forging attack on a dataset");
  attack->add_option("method", ao.method, "random or neighbor")->required()->check(CLI::IsMember({"random", "neighbor"}));
  attack->add_option("--csv", ao.csv, "Dataset CSV")->required()->check(CLI::ExistingFile);
  attack->add_option("--unlearned", ao.unlearned, "Comma-separated unlearned rows")->required();
  attack->add_option("--target", ao.target, "Comma-separated target minibatch")->required();
  attack->add_option("--size", ao.size, "Forging minibatch size (default: target size)");
  attack->add_option("--budget", ao.budget, "Random draws");
  attack->add_option("--seed", ao.seed, "Seed for parameters and draws");
  attack->add_option("--model", ao.model, "lr or nn")->check(CLI::IsMember({"lr", "nn"}));
  attack->add_option("--hidden", ao.hidden, "Hidden units for nn");
  attack->add_option("--param-scale", ao.param_scale, "Parameters uniform in [-s, s]");

  std::uint64_t sp_d = 0, sp_u = 0, sp_b = 0;
  auto* spaces = app.add_subcommand("spaces", "Search-space sizes for forging");
  spaces->add_option("--D", sp_d, "Dataset size")->required();
  spaces->add_option("--U", sp_u, "Unlearned rows")->required();
  spaces->add_option("--batch", sp_b, "Forging minibatch size")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    if (g_json) return report_error("usage", e.what(), kUsage);
    app.exit(e);
    return kUsage;
  }

  try {
    if (*commit) return cmd_commit(co);
    if (*request) return cmd_request(req_dir, req_owner, req_kinds, req_masks);
    if (*retrain) return cmd_retrain(ro);
    if (*verify) return cmd_verify(ver_dir, ver_key);
    if (*fad) return cmd_fad(fad_dir, fad_xi);
    if (*attack) return cmd_attack(ao);
    if (*spaces) return cmd_spaces(sp_d, sp_u, sp_b);
  } catch (const UsageError& e) {
    return report_error("usage", e.what(), kUsage);
  } catch (const Error& e) {
    return report_error(to_string(e.code()), e.what(), kDataError);
  } catch (const fs::filesystem_error& e) {
    return report_error("Io", e.what(), kDataError);
  } catch (const std::exception& e) {
    return report_error("internal", e.what(), kInternal);
  }
  return kUsage;
}
