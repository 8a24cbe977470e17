#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "modelforge/cli.hpp"
#include "modelforge/error.hpp"
#include "modelforge/render.hpp"
#include "modelforge/roundtrip.hpp"
#include "modelforge/selection.hpp"
#include "modelforge/transformer.hpp"

namespace modelforge::cli {

namespace {

using tree::Value;

// Raised for bad input data; maps to exit code 2.
struct DataError : Error {
  using Error::Error;
};

// Raised when a numeric check fails; maps to exit code 3.
struct CheckError : Error {
  using Error::Error;
};

std::uint64_t default_seed() {
  const char* env = std::getenv("MODELFORGE_SEED");
  if (!env || !*env) return 0;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (*end != '\0') throw CLI::ValidationError("MODELFORGE_SEED", "not an unsigned integer: " + std::string(env));
  return v;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << text;
}

Value load(const std::string& path) {
  try {
    return rt::parse(read_file(path));
  } catch (const ParseError& e) {
    throw DataError(path + ":" + e.what());
  }
}

void collect_kinds(const Value& v, std::set<std::string>& out) {
  if (v.is_node()) out.insert(v.as_node()->kind_name());
  for (const auto& [step, child] : tree::children(v)) collect_kinds(*child, out);
}

std::string available_kinds(const Value& model) {
  std::set<std::string> kinds;
  collect_kinds(model, kinds);
  std::string s;
  for (const auto& k : kinds) s += (s.empty() ? "" : ", ") + k;
  return s;
}

// Rethrows a failed rewrite as a data error listing the kinds present.
template <typename F>
Value rewrite(const Value& model, F&& fn) {
  try {
    return fn();
  } catch (const KindError& e) {
    throw DataError(std::string(e.what()) + "; available kinds: " + available_kinds(model));
  }
}

std::vector<std::int32_t> parse_tokens(const std::string& text) {
  std::vector<std::int32_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    long v = 0;
    try {
      v = std::stol(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw CLI::ValidationError("--tokens", "not an integer: '" + item + "'");
    out.push_back(static_cast<std::int32_t>(v));
  }
  if (out.empty()) throw CLI::ValidationError("--tokens", "no tokens given");
  return out;
}

void check_tokens(const Value& model, const std::vector<std::int32_t>& tokens) {
  for (const auto& table : tree::select(model).at_instances_of("EmbeddingLookup").get_all()) {
    const auto& node = *table.as_node();
    const auto& arr = node.field("table").as_variable()->value();
    const std::int64_t vocab = arr.axis_size(node.field("vocab_axis").as_string());
    for (auto t : tokens) {
      if (t < 0 || t >= vocab) {
        throw DataError("token " + std::to_string(t) + " out of range for vocabulary of " + std::to_string(vocab));
      }
    }
  }
}

nlohmann::ordered_json array_json(const NamedArray& a) {
  nlohmann::ordered_json axes = nlohmann::ordered_json::object();
  std::vector<std::int64_t> dims;
  for (const auto& [name, size] : a.named_shape()) {
    axes[name] = size;
    dims.push_back(size);
  }
  for (auto s : a.positional_shape()) dims.push_back(s);
  std::int64_t flat = 0;
  std::function<nlohmann::ordered_json(std::size_t)> nest = [&](std::size_t d) -> nlohmann::ordered_json {
    if (d == dims.size()) return static_cast<double>(a.value_at(flat++));
    auto arr = nlohmann::ordered_json::array();
    for (std::int64_t i = 0; i < dims[d]; ++i) arr.push_back(nest(d + 1));
    return arr;
  };
  nlohmann::ordered_json doc;
  doc["axes"] = axes;
  doc["data"] = nest(0);
  return doc;
}

struct BuildOpts {
  std::string variant = "llama";
  models::TransformerConfig config;
  std::string out;
};

struct TransformOpts {
  std::string in, out;
  std::int64_t rank = 4;
  float alpha = 0;
  std::uint64_t seed = 0;
  std::int64_t len = 16;
  std::int64_t batch = 1;
  std::string kind;
  std::string worlds = "worlds";
  std::int64_t src = 0;
  std::vector<std::int64_t> dst;
};

struct RunOpts {
  std::string in, out, tokens;
  std::int64_t decode = 0;
  std::int64_t worlds = 0;
};

struct RenderOpts {
  std::string in, out, format = "text";
};

struct InspectOpts {
  std::string in, count, path;
};

int do_build(const BuildOpts& o, std::ostream&) {
  auto variant = models::parse_variant(o.variant);
  if (!variant) throw CLI::ValidationError("--variant", "expected neox or llama, got " + o.variant);
  models::TransformerConfig config = o.config;
  config.variant = *variant;
  if (config.num_heads <= 0 || config.d_model % config.num_heads != 0) {
    throw CLI::ValidationError("--d-model", "d-model " + std::to_string(config.d_model) +
                                                " is not divisible by heads " + std::to_string(config.num_heads));
  }
  config.head_dim = config.d_model / config.num_heads;
  try {
    config.validate();
  } catch (const KindError& e) {
    throw CLI::ValidationError("build", e.what());
  }
  write_file(o.out, rt::serialize(models::build(config)));
  return kExitOk;
}

int do_transform(const std::string& which, const TransformOpts& o, std::ostream&) {
  const Value model = load(o.in);
  Value result;
  if (which == "lora") {
    const float alpha = o.alpha > 0 ? o.alpha : static_cast<float>(o.rank);
    result = rewrite(model, [&] {
      if (tree::select(model).at_instances_of("Linear").count() == 0) throw KindError("no Linear layers to adapt");
      return models::loraify_all(model, o.rank, alpha, o.seed);
    });
  } else if (which == "kvcache") {
    result = rewrite(model, [&] {
      if (tree::select(model).at_instances_of("Attention").count() == 0) throw KindError("no Attention layers to cache");
      return models::enable_kv_caching(model, o.len, {{models::axes::kBatch, o.batch}});
    });
  } else if (which == "patch") {
    result = rewrite(model, [&] { return models::patch_activations(model, o.kind, o.worlds, o.src, o.dst); });
  } else {
    result = rewrite(model, [&] { return models::linearize(model, o.kind, o.worlds, o.src); });
  }
  write_file(o.out, rt::serialize(result));
  return kExitOk;
}

int do_run(const RunOpts& o, std::ostream& out) {
  const Value model = load(o.in);
  const auto tokens = parse_tokens(o.tokens);
  check_tokens(model, tokens);
  NamedArray input = models::token_array({tokens});
  if (o.worlds > 0) {
    std::vector<NamedArray> copies(static_cast<std::size_t>(o.worlds), input);
    input = nx::stack(copies, "worlds");
  }
  nlohmann::ordered_json doc;
  try {
    doc = array_json(models::run(model, input));
    if (o.decode > 0) {
      if (o.worlds > 0) throw CLI::ValidationError("--decode", "cannot be combined with --worlds");
      models::reset_kv_caches(model);
      const auto decoded = models::greedy_decode(model, input, o.decode);
      doc["decoded"] = decoded.tokens;
    }
  } catch (const CLI::Error&) {
    throw;
  } catch (const Error& e) {
    throw DataError(e.what());
  }
  const std::string text = doc.dump(1) + "\n";
  if (o.out.empty()) {
    out << text;
  } else {
    write_file(o.out, text);
  }
  return kExitOk;
}

int do_render(const RenderOpts& o, std::ostream& out) {
  const Value model = load(o.in);
  std::string doc;
  if (o.format == "text") {
    doc = render::render_text(model, render::TextMode::kDefault);
  } else if (o.format == "roundtrip") {
    doc = render::render_text(model, render::TextMode::kRoundtrip);
  } else {
    doc = render::render_html(model);
  }
  if (o.out.empty()) {
    out << doc;
  } else {
    write_file(o.out, doc);
  }
  return kExitOk;
}

int do_roundtrip_check(const std::string& in, std::ostream& out) {
  const Value model = load(in);
  const std::string first = rt::serialize(model);
  Value again;
  try {
    again = rt::parse(first);
  } catch (const ParseError& e) {
    throw CheckError(std::string("reserialized document does not parse: ") + e.what());
  }
  if (!tree::structurally_equal(model, again)) throw CheckError("reparsed tree differs from the input");
  if (rt::serialize(again) != first) throw CheckError("serialization is not a fixpoint");
  out << "roundtrip ok\n";
  return kExitOk;
}

int do_inspect(const InspectOpts& o, std::ostream& out) {
  const Value model = load(o.in);
  try {
    if (!o.count.empty()) {
      if (!tree::KindRegistry::global().find(o.count)) {
        throw DataError("unknown kind '" + o.count + "'; available kinds: " + available_kinds(model));
      }
      out << tree::select(model).at_instances_of(o.count).count() << "\n";
    } else if (!o.path.empty()) {
      out << render::render_text(tree::resolve(model, tree::TreePath::parse(o.path)));
    } else {
      std::map<std::string, int> counts;
      std::function<void(const Value&)> walk = [&](const Value& v) {
        if (v.is_node()) ++counts[v.as_node()->kind_name()];
        for (const auto& [step, child] : tree::children(v)) walk(*child);
      };
      walk(model);
      for (const auto& [kind, n] : counts) out << kind << " " << n << "\n";
    }
  } catch (const DataError&) {
    throw;
  } catch (const Error& e) {
    throw DataError(e.what());
  }
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  models::register_kinds();
  CLI::App app{"modelforge: build, edit, run and render tree-structured models"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for all subcommands");

  std::uint64_t seed = 0;
  try {
    seed = default_seed();
  } catch (const CLI::Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  BuildOpts build;
  build.config.seed = seed;
  auto* b = app.add_subcommand("build", "Build a demo Transformer and write it as .rt");
  b->add_option("--variant", build.variant, "neox or llama")->capture_default_str();
  b->add_option("--blocks", build.config.num_blocks, "Number of blocks")->capture_default_str();
  b->add_option("--d-model", build.config.d_model, "Embedding width")->capture_default_str();
  b->add_option("--heads", build.config.num_heads, "Attention heads")->capture_default_str();
  b->add_option("--mlp", build.config.mlp_hidden, "Feed-forward width")->capture_default_str();
  b->add_option("--vocab", build.config.vocab_size, "Vocabulary size")->capture_default_str();
  b->add_option("--seed", build.config.seed, "Initialization seed (default: $MODELFORGE_SEED or 0)");
  b->add_option("--out", build.out, "Output .rt file")->required();

  TransformOpts topt;
  topt.seed = seed;
  auto* t = app.add_subcommand("transform", "Apply a structural rewrite to a model");
  t->require_subcommand(1);
  auto add_io = [&](CLI::App* sc) {
    sc->add_option("--in", topt.in, "Input .rt file")->required();
    sc->add_option("--out", topt.out, "Output .rt file")->required();
  };
  auto* lora = t->add_subcommand("lora", "Wrap every Linear in a low-rank adapter");
  lora->add_option("--rank", topt.rank, "Adapter rank")->capture_default_str();
  lora->add_option("--alpha", topt.alpha, "Scale numerator (default: rank)");
  lora->add_option("--seed", topt.seed, "Adapter initialization seed");
  add_io(lora);
  auto* kv = t->add_subcommand("kvcache", "Replace attention with KV-caching attention");
  kv->add_option("--len", topt.len, "Cache length")->capture_default_str();
  kv->add_option("--batch", topt.batch, "Batch size fixed by the caches")->capture_default_str();
  add_io(kv);
  auto* patch = t->add_subcommand("patch", "Insert activation rewiring after every instance of a kind");
  patch->add_option("--after", topt.kind, "Kind to patch after")->required();
  patch->add_option("--worlds", topt.worlds, "Worlds axis name")->capture_default_str();
  patch->add_option("--src", topt.src, "Source world index")->required();
  patch->add_option("--dst", topt.dst, "Destination world indices")->required()->delimiter(',');
  add_io(patch);
  auto* lin = t->add_subcommand("linearize", "Wrap every instance of a kind in LinearizeAndAdjust");
  lin->add_option("--target", topt.kind, "Kind to linearize")->required();
  lin->add_option("--worlds", topt.worlds, "Worlds axis name")->capture_default_str();
  lin->add_option("--ref", topt.src, "Reference world index")->required();
  add_io(lin);

  RunOpts ropt;
  auto* r = app.add_subcommand("run", "Run a model on tokens and write logits as JSON");
  r->add_option("--in", ropt.in, "Input .rt file")->required();
  r->add_option("--tokens", ropt.tokens, "Comma-separated token ids")->required();
  r->add_option("--decode", ropt.decode, "Greedy-decode this many tokens")->check(CLI::NonNegativeNumber);
  r->add_option("--worlds", ropt.worlds, "Duplicate the input along a worlds axis of this size")
      ->check(CLI::NonNegativeNumber);
  r->add_option("--out", ropt.out, "Output .json file (default: stdout)");

  RenderOpts popt;
  auto* p = app.add_subcommand("render", "Render a model as text, roundtrip text or HTML");
  p->add_option("--in", popt.in, "Input .rt file")->required();
  p->add_option("--format", popt.format, "text, roundtrip or html")
      ->check(CLI::IsMember({"text", "roundtrip", "html"}))
      ->capture_default_str();
  p->add_option("--out", popt.out, "Output file (default: stdout)");

  std::string check_in;
  auto* c = app.add_subcommand("roundtrip-check", "Check that a model survives serialize and parse");
  c->add_option("--in", check_in, "Input .rt file")->required();

  InspectOpts iopt;
  auto* i = app.add_subcommand("inspect", "Count kinds or print a subtree");
  i->add_option("--in", iopt.in, "Input .rt file")->required();
  auto* count_opt = i->add_option("--count", iopt.count, "Print the number of instances of a kind");
  i->add_option("--path", iopt.path, "Print the subtree at a path")->excludes(count_opt);

  try {
    app.parse(argc, argv);
    if (*b) return do_build(build, out);
    if (*t) {
      for (const char* name : {"lora", "kvcache", "patch", "linearize"}) {
        if (*t->get_subcommand(name)) return do_transform(name, topt, out);
      }
    }
    if (*r) return do_run(ropt, out);
    if (*p) return do_render(popt, out);
    if (*c) return do_roundtrip_check(check_in, out);
    if (*i) return do_inspect(iopt, out);
    return kExitUsage;
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const CheckError& e) {
    err << "check failed: " << e.what() << "\n";
    return kExitCheck;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace modelforge::cli
