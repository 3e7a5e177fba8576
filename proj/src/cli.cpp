#include "phynfp/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "phynfp/csv.hpp"
#include "phynfp/diffops.hpp"
#include "phynfp/errors.hpp"
#include "phynfp/pdesim.hpp"
#include "phynfp/tensor.hpp"

namespace phynfp::cli {

namespace fs = std::filesystem;

Json default_config() {
  static const Json defaults = Json::parse(R"({
    "seed": 0,
    "out": "out",
    "graph": {"edges": "", "nodes": ""},
    "simulation": {
      "kind": "river",
      "seed": 0,
      "dt": 0.5,
      "steps": 4000,
      "burn_in": 200,
      "nu": 0.0,
      "noise_sigma": 0.01,
      "gravity": 9.81,
      "initial_u": 0.6,
      "initial_rho": 0.3,
      "dx_feature": "length",
      "dz_feature": "drop",
      "cfl_policy": "abort",
      "friction": {"enabled": false, "manning_n": 0.03, "depth": 1.0},
      "closure": {"u_free": 1.0, "rho_max": 1.0, "rate": 0.0},
      "inflow": {
        "nodes": [],
        "base": 0.6,
        "amplitude": 0.2,
        "period": 150.0,
        "ar_coef": 0.95,
        "ar_sigma": 0.05,
        "min": 0.1,
        "max": 1.5
      }
    },
    "data": {"dir": ""},
    "model": {
      "variant": "river",
      "layers": 3,
      "hidden": 16,
      "window": 24,
      "horizon": 6,
      "phi_hidden": 8,
      "delta_t_init": 0.7,
      "g_hat_init": 1.0
    },
    "train": {
      "epochs": 500,
      "patience": 20,
      "batch_size": 32,
      "lr": 0.001,
      "weight_decay": 0.0,
      "train_fraction": 0.7,
      "val_fraction": 0.15,
      "topology": "forward"
    },
    "eval": {"checkpoint": ""},
    "ds_report": {"forward": "", "reverse": "", "reference_ds": null},
    "perturb": {"checkpoint": "", "node": "", "delta": 0.5},
    "spectrum": {"ring_size": 256, "alphas": [0.0, 0.5, 1.0]},
    "inverse_demo": {"ring_size": 64, "steps": 200, "dt": 0.95, "speed": 1.0, "sigma": 0.01, "seed": 0}
  })");
  return defaults;
}

namespace {

const std::vector<std::vector<std::string>> kPathKeys = {
    {"graph", "edges"},   {"graph", "nodes"},      {"data", "dir"},         {"eval", "checkpoint"},
    {"ds_report", "forward"}, {"ds_report", "reverse"}, {"perturb", "checkpoint"},
};

std::string join(const std::vector<std::string>& path) {
  std::string s;
  for (const auto& p : path) s += (s.empty() ? "" : ".") + p;
  return s;
}

bool same_kind(const Json& def, const Json& val) {
  if (def.is_null()) return val.is_null() || val.is_number();
  if (def.is_number_float()) return val.is_number();
  if (def.is_number_integer()) return val.is_number_integer();
  if (def.is_boolean()) return val.is_boolean();
  if (def.is_string()) return val.is_string();
  if (def.is_array()) return val.is_array();
  if (def.is_object()) return val.is_object();
  return false;
}

// Copies `user` over `base` key by key, rejecting keys and types the defaults do not know.
void merge_checked(Json& base, const Json& user, std::vector<std::string>& path) {
  if (!user.is_object()) throw ConfigError("config " + (path.empty() ? "root" : join(path)) + " must be an object");
  for (const auto& [key, value] : user.items()) {
    path.push_back(key);
    if (!base.contains(key)) throw ConfigError("unknown config key '" + join(path) + "'");
    Json& slot = base[key];
    if (!same_kind(slot, value)) throw ConfigError("config key '" + join(path) + "' has the wrong type");
    if (slot.is_object()) {
      merge_checked(slot, value, path);
    } else {
      slot = value;
    }
    path.pop_back();
  }
}

Json* find(Json& root, const std::vector<std::string>& path) {
  Json* node = &root;
  for (const auto& key : path) {
    if (!node->is_object() || !node->contains(key)) return nullptr;
    node = &(*node)[key];
  }
  return node;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace

void apply_override(Json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos && eq > 0, "override '" + assignment + "' must look like key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  std::vector<std::string> path;
  std::stringstream ss(key);
  for (std::string part; std::getline(ss, part, '.');) path.push_back(part);

  Json defaults = default_config();
  const Json* def = find(defaults, path);
  require(def != nullptr && !def->is_object(), "unknown config key '" + key + "'");
  Json value;
  if (def->is_string()) {
    value = raw;
  } else {
    value = Json::parse(raw, nullptr, false);
    require(!value.is_discarded(), "override '" + key + "' is not valid JSON");
  }
  Json* node = &cfg;
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    if (!node->contains(path[i])) (*node)[path[i]] = Json::object();
    node = &(*node)[path[i]];
  }
  (*node)[path.back()] = std::move(value);
}

void validate_config(const Json& user) {
  Json merged = default_config();
  std::vector<std::string> path;
  merge_checked(merged, user, path);
  const Json& cfg = merged;

  const auto& sim = cfg["simulation"];
  require(sim["kind"] == "river" || sim["kind"] == "traffic", "simulation.kind must be river or traffic");
  require(sim["dt"].get<double>() > 0.0, "simulation.dt must be positive");
  require(sim["steps"].get<long long>() >= 1, "simulation.steps must be at least 1");
  require(sim["burn_in"].get<long long>() >= 0, "simulation.burn_in must be non-negative");
  require(sim["seed"].get<long long>() >= 0, "simulation.seed must be non-negative");
  require(sim["nu"].get<double>() >= 0.0, "simulation.nu must be non-negative");
  require(sim["noise_sigma"].get<double>() >= 0.0, "simulation.noise_sigma must be non-negative");
  require(sim["cfl_policy"] == "abort" || sim["cfl_policy"] == "record", "simulation.cfl_policy must be abort or record");
  for (const auto& n : sim["inflow"]["nodes"]) require(n.is_string(), "simulation.inflow.nodes must hold node labels");
  try {
    InflowSpec spec{sim["inflow"]["base"], sim["inflow"]["amplitude"], sim["inflow"]["period"],
                    sim["inflow"]["ar_coef"], sim["inflow"]["ar_sigma"], sim["inflow"]["min"], sim["inflow"]["max"]};
    spec.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("simulation.") + e.what());
  }

  require(cfg["seed"].get<long long>() >= 0, "seed must be non-negative");
  const auto& model = cfg["model"];
  try {
    parse_variant(model["variant"].get<std::string>());
  } catch (const ConfigError&) {
    throw ConfigError("model.variant must be river, traffic or gcn");
  }
  require(model["layers"].get<int>() >= 1, "model.layers must be >= 1");
  require(model["hidden"].get<int>() >= 1, "model.hidden must be >= 1");
  require(model["window"].get<int>() >= 1, "model.window must be >= 1");
  require(model["horizon"].get<int>() >= 1, "model.horizon must be >= 1");
  require(model["phi_hidden"].get<int>() >= 1, "model.phi_hidden must be >= 1");

  const auto& tr = cfg["train"];
  require(tr["epochs"].get<int>() >= 0, "train.epochs must be >= 0");
  require(tr["patience"].get<int>() >= 1, "train.patience must be >= 1");
  require(tr["batch_size"].get<int>() >= 0, "train.batch_size must be >= 0");
  require(tr["lr"].get<double>() > 0.0, "train.lr must be positive");
  require(tr["weight_decay"].get<double>() >= 0.0, "train.weight_decay must be non-negative");
  const double f_train = tr["train_fraction"], f_val = tr["val_fraction"];
  require(f_train > 0.0 && f_val > 0.0 && f_train + f_val < 1.0, "train fractions must be positive and sum below 1");
  require(tr["topology"] == "forward" || tr["topology"] == "reverse", "train.topology must be forward or reverse");

  const auto& ref = cfg["ds_report"]["reference_ds"];
  require(ref.is_null() || ref.get<double>() != 0.0, "ds_report.reference_ds must be non-zero (relative DS is undefined)");
  require(std::isfinite(cfg["perturb"]["delta"].get<double>()), "perturb.delta must be finite");

  const auto& sp = cfg["spectrum"];
  require(sp["ring_size"].get<long long>() >= 8, "spectrum.ring_size must be at least 8");
  for (const auto& a : sp["alphas"]) require(a.is_number(), "spectrum.alphas must be numbers");

  const auto& inv = cfg["inverse_demo"];
  require(inv["ring_size"].get<long long>() >= 8, "inverse_demo.ring_size must be at least 8");
  require(inv["steps"].get<long long>() >= 1, "inverse_demo.steps must be at least 1");
  require(inv["dt"].get<double>() > 0.0 && inv["speed"].get<double>() > 0.0, "inverse_demo.dt and speed must be positive");
  require(inv["dt"].get<double>() * inv["speed"].get<double>() <= 1.0, "inverse_demo.dt * speed must not exceed 1 (CFL)");
  require(inv["sigma"].get<double>() >= 0.0, "inverse_demo.sigma must be non-negative");
  require(inv["seed"].get<long long>() >= 0, "inverse_demo.seed must be non-negative");
}

Json load_config(const fs::path& path, const std::vector<std::string>& overrides) {
  Json user = Json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    user = Json::parse(in, nullptr, false);
    if (user.is_discarded()) throw ConfigError("config " + path.string() + " is not valid JSON");
    if (!user.is_object()) throw ConfigError("config root must be an object");
    const fs::path base = fs::absolute(path).parent_path();
    for (const auto& key : kPathKeys) {
      Json* v = find(user, key);
      if (v && v->is_string() && !v->get<std::string>().empty() && fs::path(v->get<std::string>()).is_relative()) {
        *v = (base / v->get<std::string>()).lexically_normal().string();
      }
    }
  }
  for (const auto& o : overrides) apply_override(user, o);
  Json merged = default_config();
  std::vector<std::string> trail;
  merge_checked(merged, user, trail);
  validate_config(merged);
  return merged;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

namespace {

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_json(const fs::path& p, const Json& j) {
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + p.string());
}

Json read_json(const fs::path& p) {
  Json j = Json::parse(read_bytes(p), nullptr, false);
  if (j.is_discarded()) throw SchemaError(p.string() + " is not valid JSON");
  return j;
}

void make_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec || !fs::is_directory(p)) throw IoError("cannot create output directory " + p.string());
}

Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

}  // namespace

std::string config_hash(const Json& cfg) { return hex(fnv1a64(cfg.dump())); }

DirectedGraph graph_from_config(const Json& cfg) {
  const std::string edges = cfg["graph"]["edges"];
  const std::string nodes = cfg["graph"]["nodes"];
  if (edges.empty()) throw ConfigError("graph.edges is required");
  return nodes.empty() ? load_graph(edges) : load_graph(edges, nodes);
}

Dataset simulate_from_config(const Json& cfg) {
  const DirectedGraph g = graph_from_config(cfg);
  const auto& s = cfg["simulation"];
  SimConfig sim;
  sim.dt = s["dt"];
  sim.steps = s["steps"].get<std::size_t>();
  sim.nu = s["nu"];
  sim.noise_sigma = s["noise_sigma"];
  sim.seed = s["seed"].get<std::uint64_t>();
  sim.cfl_policy = s["cfl_policy"] == "record" ? CflPolicy::record : CflPolicy::abort;
  sim.friction = {s["friction"]["enabled"], s["friction"]["manning_n"], s["friction"]["depth"]};
  sim.closure = {s["closure"]["u_free"], s["closure"]["rho_max"], s["closure"]["rate"]};
  const auto& in = s["inflow"];
  const InflowSpec inflow{in["base"], in["amplitude"], in["period"], in["ar_coef"], in["ar_sigma"], in["min"], in["max"]};
  std::vector<NodeId> forced;
  for (const auto& label : in["nodes"]) forced.push_back(g.node_index(label.get<std::string>()));

  if (s["kind"] == "river") {
    RiverScenario sc;
    sc.sim = sim;
    sc.gravity = s["gravity"];
    sc.initial_u = s["initial_u"];
    sc.dx_feature = s["dx_feature"];
    sc.dz_feature = s["dz_feature"];
    sc.inflow_nodes = forced;
    sc.inflow = inflow;
    sc.burn_in = s["burn_in"].get<std::size_t>();
    return generate_river(g, sc);
  }
  TrafficScenario sc;
  sc.sim = sim;
  sc.initial_rho = s["initial_rho"];
  sc.initial_u = s["initial_u"];
  sc.dx_feature = s["dx_feature"];
  sc.inflow_nodes = forced;
  sc.inflow = inflow;
  sc.burn_in = s["burn_in"].get<std::size_t>();
  return generate_traffic(g, sc);
}

ModelConfig model_config(const Json& cfg, int num_features, int edge_features) {
  const auto& m = cfg["model"];
  ModelConfig mc;
  mc.variant = parse_variant(m["variant"]);
  mc.layers = m["layers"];
  mc.hidden = m["hidden"];
  mc.window = m["window"];
  mc.horizon = m["horizon"];
  mc.phi_hidden = m["phi_hidden"];
  mc.delta_t_init = m["delta_t_init"];
  mc.g_hat_init = m["g_hat_init"];
  mc.num_features = num_features;
  mc.edge_features = edge_features;
  mc.seed = cfg["seed"].get<std::uint64_t>();
  if (mc.variant != Variant::gcn && edge_features < 1) {
    throw ConfigError("the " + to_string(mc.variant) + " variant needs at least one edge feature");
  }
  return mc;
}

TrainConfig train_config(const Json& cfg) {
  const auto& t = cfg["train"];
  TrainConfig tc;
  tc.epochs = t["epochs"];
  tc.patience = t["patience"];
  tc.batch_size = t["batch_size"];
  tc.lr = t["lr"];
  tc.weight_decay = t["weight_decay"];
  tc.seed = cfg["seed"].get<std::uint64_t>();
  return tc;
}

PreparedData prepare_from_config(const Json& cfg, const Dataset& data) {
  return prepare_data(data.series, data.targets, cfg["model"]["window"], cfg["model"]["horizon"],
                      cfg["train"]["train_fraction"], cfg["train"]["val_fraction"]);
}

Dataset load_dataset(const fs::path& dir) {
  for (const char* f : {"edges.csv", "series.csv", "targets.csv"}) {
    if (!fs::exists(dir / f)) throw IoError("dataset file " + (dir / f).string() + " is missing");
  }
  Dataset d;
  d.graph = load_graph(dir / "edges.csv", dir / "series.csv");
  d.series = load_node_series(dir / "series.csv", d.graph);
  d.targets = load_targets(dir / "targets.csv", d.graph);
  return d;
}

std::string dataset_fingerprint(const fs::path& dir) {
  std::string all;
  for (const char* f : {"edges.csv", "series.csv", "targets.csv"}) all += read_bytes(dir / f);
  return hex(fnv1a64(all));
}

namespace {

struct Checkpoint {
  Json manifest;
  Json config;
  Dataset data;
  PreparedData prepared;
  std::optional<GraphContext> ctx;
  std::optional<FluxModel> model;
};

Json split_json(const Split& s) {
  return {{"train", {s.train.begin, s.train.end}}, {"val", {s.val.begin, s.val.end}}, {"test", {s.test.begin, s.test.end}}};
}

DirectedGraph oriented(const DirectedGraph& g, const std::string& topology) {
  return topology == "reverse" ? reverse_topology(g) : g;
}

// Loads a `train` output directory and re-derives its data split. The stored
// config must still hash to the recorded value and the dataset must be unchanged.
Checkpoint load_checkpoint(const fs::path& dir) {
  if (dir.empty()) throw ConfigError("a checkpoint directory is required");
  if (!fs::exists(dir / "model.json")) throw IoError("no model.json in " + dir.string());
  Checkpoint c;
  c.manifest = read_json(dir / "model.json");
  if (!c.manifest.contains("config") || !c.manifest.contains("config_hash")) {
    throw SchemaError(dir.string() + "/model.json lacks config or config_hash");
  }
  c.config = c.manifest["config"];
  if (config_hash(c.config) != c.manifest["config_hash"].get<std::string>()) {
    throw ProtocolError("config hash mismatch in " + dir.string() + "/model.json");
  }
  const fs::path data_dir = c.config["data"]["dir"].get<std::string>();
  if (dataset_fingerprint(data_dir) != c.manifest["data_fingerprint"].get<std::string>()) {
    throw ProtocolError("dataset " + data_dir.string() + " changed since " + dir.string() + " was trained");
  }
  c.data = load_dataset(data_dir);
  c.prepared = prepare_from_config(c.config, c.data);
  c.ctx.emplace(oriented(c.data.graph, c.manifest["topology"]));
  const ModelConfig mc = model_config(c.config, static_cast<int>(c.data.series.variables()),
                                      static_cast<int>(c.data.graph.feature_width()));
  c.model.emplace(mc, ad::load_parameters(dir / "checkpoint"));
  return c;
}

Json base_manifest(const std::string& command, const Json& cfg) {
  return {{"command", command}, {"config_hash", config_hash(cfg)}, {"config", cfg}};
}

int cmd_simulate(const Json& cfg, const fs::path& out, std::ostream& log) {
  const Dataset d = simulate_from_config(cfg);
  make_dir(out);
  save_graph(d.graph, out / "edges.csv");
  save_node_series(d.series, d.graph, out / "series.csv");
  save_targets(d.targets, d.graph, out / "targets.csv");
  Json m = base_manifest("simulate", cfg);
  m["files"] = {"edges.csv", "series.csv", "targets.csv"};
  m["nodes"] = d.graph.num_nodes();
  m["steps"] = d.series.steps;
  m["variables"] = d.series.variable_names;
  m["cfl"] = {{"max", d.cfl.max_cfl}, {"violations", d.cfl.violations}};
  m["data_fingerprint"] = dataset_fingerprint(out);
  write_json(out / "manifest.json", m);
  log << "simulate: " << d.series.steps << " steps x " << d.graph.num_nodes() << " nodes -> " << out.string() << '\n';
  return kOk;
}

int cmd_train(const Json& cfg, const fs::path& out, std::ostream& log) {
  const fs::path data_dir = cfg["data"]["dir"].get<std::string>();
  if (data_dir.empty()) throw ConfigError("data.dir is required for train");
  const Dataset data = load_dataset(data_dir);
  const std::string fingerprint = dataset_fingerprint(data_dir);
  const PreparedData prepared = prepare_from_config(cfg, data);
  const std::string topology = cfg["train"]["topology"];
  const GraphContext ctx(oriented(data.graph, topology));
  FluxModel model(model_config(cfg, static_cast<int>(data.series.variables()),
                               static_cast<int>(data.graph.feature_width())));
  const TrainHistory h = train(model, ctx, prepared.train, prepared.val, train_config(cfg));

  make_dir(out);
  std::vector<const ad::Parameter*> params;
  for (const auto& p : model.parameters()) params.push_back(&p);
  ad::save_parameters(out / "checkpoint", params);

  const auto& mc = model.config();
  Json m = base_manifest("train", cfg);
  m["variant"] = to_string(mc.variant);
  m["L"] = mc.layers;
  m["d"] = mc.hidden;
  m["W"] = mc.window;
  m["n"] = mc.horizon;
  m["seed"] = mc.seed;
  m["delta_t_final"] = number_or_null(model.delta_t());
  m["topology"] = topology;
  m["data_fingerprint"] = fingerprint;
  m["split"] = split_json(prepared.split);
  m["epochs_run"] = h.epochs();
  m["best_epoch"] = h.best_epoch;
  m["val_mse"] = evaluate_mse(model, ctx, prepared.val);
  m["test_mse"] = evaluate_mse(model, ctx, prepared.test);
  write_json(out / "model.json", m);

  Json hist = {{"config_hash", config_hash(cfg)}, {"train_loss", h.train_loss}, {"val_loss", h.val_loss},
               {"best_epoch", h.best_epoch}};
  hist["delta_t"] = Json::array();
  for (double v : h.delta_t) hist["delta_t"].push_back(number_or_null(v));
  write_json(out / "history.json", hist);
  log << "train: " << to_string(mc.variant) << " (" << topology << ") " << h.epochs() << " epochs, best "
      << h.best_epoch << ", test MSE " << m["test_mse"].get<double>() << ", " << std::fixed << std::setprecision(1)
      << h.wall_seconds << " s\n";
  return kOk;
}

int cmd_eval(const Json& cfg, const fs::path& out, std::ostream& log) {
  const Checkpoint c = load_checkpoint(cfg["eval"]["checkpoint"].get<std::string>());
  Json m = base_manifest("eval", cfg);
  m["checkpoint_config_hash"] = c.manifest["config_hash"];
  m["topology"] = c.manifest["topology"];
  m["variant"] = c.manifest["variant"];
  m["train_mse"] = evaluate_mse(*c.model, *c.ctx, c.prepared.train);
  m["val_mse"] = evaluate_mse(*c.model, *c.ctx, c.prepared.val);
  m["test_mse"] = evaluate_mse(*c.model, *c.ctx, c.prepared.test);
  make_dir(out);
  write_json(out / "metrics.json", m);
  log << "eval: test MSE " << m["test_mse"].get<double>() << '\n';
  return kOk;
}

int cmd_ds_report(const Json& cfg, const fs::path& out, std::ostream& log) {
  const Checkpoint f = load_checkpoint(cfg["ds_report"]["forward"].get<std::string>());
  const Checkpoint r = load_checkpoint(cfg["ds_report"]["reverse"].get<std::string>());
  if (f.manifest["data_fingerprint"] != r.manifest["data_fingerprint"] || !(f.prepared.split == r.prepared.split) ||
      f.manifest["W"] != r.manifest["W"] || f.manifest["n"] != r.manifest["n"]) {
    throw ProtocolError("forward and reverse checkpoints were not evaluated on the same test split");
  }
  std::optional<double> ref;
  if (!cfg["ds_report"]["reference_ds"].is_null()) ref = cfg["ds_report"]["reference_ds"].get<double>();
  const DSReport rep = make_ds_report(evaluate_mse(*f.model, *f.ctx, f.prepared.test),
                                      evaluate_mse(*r.model, *r.ctx, r.prepared.test), ref);
  Json m = base_manifest("ds-report", cfg);
  m["loss_forward"] = rep.loss_forward;
  m["loss_reverse"] = rep.loss_reverse;
  m["ds"] = rep.ds;
  m["reference_ds"] = ref ? Json(*ref) : Json(nullptr);
  m["rds"] = rep.rds ? Json(*rep.rds) : Json(nullptr);
  m["forward_config_hash"] = f.manifest["config_hash"];
  m["reverse_config_hash"] = r.manifest["config_hash"];
  make_dir(out);
  write_json(out / "ds_report.json", m);
  log << "ds-report: DS " << rep.ds;
  if (rep.rds) log << ", RDS " << *rep.rds;
  log << '\n';
  return kOk;
}

int cmd_perturb(const Json& cfg, const fs::path& out, std::ostream& log) {
  const Checkpoint c = load_checkpoint(cfg["perturb"]["checkpoint"].get<std::string>());
  std::string label = cfg["perturb"]["node"];
  NodeId node = 0;
  if (label.empty()) {
    const auto heads = headwaters(c.data.graph);
    node = heads.empty() ? 0 : heads.front();
    label = c.data.graph.node_ids()[static_cast<std::size_t>(node)];
  } else {
    try {
      node = c.data.graph.node_index(label);
    } catch (const IndexError&) {
      throw ValueError("unknown node label '" + label + "'");
    }
  }
  const double delta = cfg["perturb"]["delta"];
  const auto resp = perturbation_response(*c.model, *c.ctx, c.prepared.test, node, delta);
  make_dir(out);
  std::ofstream csv_out(out / "perturbation.csv");
  if (!csv_out) throw IoError("cannot write " + (out / "perturbation.csv").string());
  csv::write_row(csv_out, {"node", "mean_response", "std_response"});
  for (Eigen::Index i = 0; i < resp.mean.size(); ++i) {
    csv::write_row(csv_out, {c.data.graph.node_ids()[static_cast<std::size_t>(i)], csv::format(resp.mean(i)),
                             csv::format(resp.std(i))});
  }
  Json m = base_manifest("perturb", cfg);
  m["files"] = {"perturbation.csv"};
  m["checkpoint_config_hash"] = c.manifest["config_hash"];
  m["topology"] = c.manifest["topology"];
  m["node"] = label;
  m["delta"] = delta;
  write_json(out / "manifest.json", m);
  log << "perturb: " << label << " += " << delta << " over " << c.prepared.test.samples << " test windows\n";
  return kOk;
}

int cmd_spectrum(const Json& cfg, const fs::path& out, std::ostream& log) {
  const auto n = cfg["spectrum"]["ring_size"].get<std::size_t>();
  std::vector<double> alphas = cfg["spectrum"]["alphas"];
  make_dir(out);
  std::ofstream csv_out(out / "spectrum.csv");
  if (!csv_out) throw IoError("cannot write " + (out / "spectrum.csv").string());
  csv::write_row(csv_out, {"omega", "closed_form", "empirical", "alpha"});
  std::size_t rows = 0;
  for (double omega : ring_frequencies(n)) {
    const auto diff = empirical_difference_response(n, omega);
    csv::write_row(csv_out, {csv::format(omega), csv::format(closed_form_diff_magnitude(omega)),
                             csv::format(diff.magnitude), "none"});
    ++rows;
    for (double a : alphas) {
      const auto comp = empirical_response(n, omega, a);
      csv::write_row(csv_out, {csv::format(omega), csv::format(closed_form_composite_magnitude(omega, a)),
                               csv::format(comp.magnitude), csv::format(a)});
      ++rows;
    }
  }
  Json m = base_manifest("spectrum", cfg);
  m["files"] = {"spectrum.csv"};
  m["rows"] = rows;
  write_json(out / "manifest.json", m);
  log << "spectrum: " << rows << " rows on a " << n << "-node ring\n";
  return kOk;
}

int cmd_inverse_demo(const Json& cfg, const fs::path& out, std::ostream& log) {
  const auto& c = cfg["inverse_demo"];
  const auto n = c["ring_size"].get<std::size_t>();
  const DirectedGraph ring = directed_ring(n);
  SimConfig sim;
  sim.dt = c["dt"];
  sim.dx = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(ring.num_edges()));
  sim.steps = c["steps"].get<std::size_t>();
  sim.seed = c["seed"].get<std::uint64_t>();
  const double sigma = c["sigma"];
  const auto rep = reverse_reconstruction_demo(ring, sim, c["speed"].get<double>(), sigma);
  Json m = base_manifest("inverse-demo", cfg);
  m["growth_factor"] = rep.growth_factor;
  m["error_norm"] = rep.error_norm;
  m["high_frequency_fraction"] = rep.high_frequency_fraction;
  m["spectrum"] = Json::array();
  for (const auto& bin : rep.spectrum) m["spectrum"].push_back({{"omega", bin.omega}, {"energy", bin.magnitude}});
  make_dir(out);
  write_json(out / "amplification.json", m);
  log << "inverse-demo: growth factor " << rep.growth_factor << ", high-frequency share "
      << rep.high_frequency_fraction << '\n';
  return kOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Flux prediction on directed graphs with physics-guided message passing", "phynfp"};
  app.require_subcommand(1, 1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--seed", seed, "seed (simulate: data seed; otherwise model and training seed)");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--set", overrides, "override a config value: section.key=value")->take_all();

  struct Flag {
    std::string name, key, help;
  };
  const std::vector<std::pair<std::string, std::vector<Flag>>> commands = {
      {"simulate", {{"--steps", "simulation.steps", "time steps to keep"}}},
      {"train",
       {{"--data", "data.dir", "dataset directory"},
        {"--variant", "model.variant", "river | traffic | gcn"},
        {"--topology", "train.topology", "forward | reverse"}}},
      {"eval", {{"--checkpoint", "eval.checkpoint", "train output directory"}}},
      {"ds-report",
       {{"--forward", "ds_report.forward", "forward-topology train output"},
        {"--reverse", "ds_report.reverse", "reverse-topology train output"},
        {"--reference-ds", "ds_report.reference_ds", "reference DS for RDS"}}},
      {"perturb",
       {{"--checkpoint", "perturb.checkpoint", "train output directory"},
        {"--node", "perturb.node", "node label to perturb"},
        {"--delta", "perturb.delta", "perturbation size in normalized units"}}},
      {"spectrum", {{"--ring-size", "spectrum.ring_size", "ring size"}}},
      {"inverse-demo",
       {{"--sigma", "inverse_demo.sigma", "observation noise"}, {"--steps", "inverse_demo.steps", "steps"}}},
  };
  std::map<std::string, std::map<std::string, std::string>> flag_values;
  std::map<std::string, CLI::App*> subs;
  const std::map<std::string, std::string> descriptions = {
      {"simulate", "generate a synthetic dataset with the upwind simulator"},
      {"train", "train a model and write a checkpoint"},
      {"eval", "test-split MSE of a checkpoint"},
      {"ds-report", "direction sensitivity from a forward and a reverse checkpoint"},
      {"perturb", "per-node response to a perturbation at one node"},
      {"spectrum", "closed-form and empirical operator magnitudes on a ring"},
      {"inverse-demo", "noise amplification of reverse reconstruction"},
  };
  for (const auto& [name, flags] : commands) {
    auto* sub = app.add_subcommand(name, descriptions.at(name));
    subs[name] = sub;
    for (const auto& f : flags) sub->add_option(f.name, flag_values[name][f.key], f.help);
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  std::string command;
  for (const auto& [name, sub] : subs) {
    if (sub->parsed()) command = name;
  }

  try {
    for (const auto& [key, value] : flag_values[command]) {
      if (!value.empty()) overrides.push_back(key + "=" + value);
    }
    if (seed) overrides.push_back((command == "simulate" ? "simulation.seed=" : "seed=") + std::to_string(*seed));
    if (!out_dir.empty()) overrides.push_back("out=" + out_dir);
    const Json cfg = load_config(config_path, overrides);
    const fs::path out_path = cfg["out"].get<std::string>();

    if (command == "simulate") return cmd_simulate(cfg, out_path, out);
    if (command == "train") return cmd_train(cfg, out_path, out);
    if (command == "eval") return cmd_eval(cfg, out_path, out);
    if (command == "ds-report") return cmd_ds_report(cfg, out_path, out);
    if (command == "perturb") return cmd_perturb(cfg, out_path, out);
    if (command == "spectrum") return cmd_spectrum(cfg, out_path, out);
    return cmd_inverse_demo(cfg, out_path, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const InstabilityError& e) {
    err << "numerical divergence: " << e.what() << '\n';
    return kDivergence;
  } catch (const TrainingDivergedError& e) {
    err << "numerical divergence: " << e.what() << '\n';
    return kDivergence;
  } catch (const Error& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const Json::exception& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace phynfp::cli
