#include "lightvit/config.hpp"

#include <algorithm>
#include <map>
#include <sstream>

namespace lightvit {

uint64_t fnv1a64(const std::string& text) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

ModelConfig ModelConfig::variant_t() {
  ModelConfig c;
  c.variant = "T";
  c.stem_width = 64;
  c.stages = {StageSpec{2, 64, 2}, StageSpec{6, 128, 4}, StageSpec{6, 256, 8}};
  c.global_tokens = 8;
  return c;
}

ModelConfig ModelConfig::variant_s() {
  ModelConfig c;
  c.variant = "S";
  c.stem_width = 96;
  c.stages = {StageSpec{2, 96, 3}, StageSpec{6, 192, 6}, StageSpec{6, 384, 12}};
  c.global_tokens = 16;
  return c;
}

ModelConfig ModelConfig::variant_b() {
  ModelConfig c;
  c.variant = "B";
  c.stem_width = 128;
  c.stages = {StageSpec{3, 128, 4}, StageSpec{8, 256, 8}, StageSpec{6, 512, 16}};
  c.global_tokens = 24;
  return c;
}

ModelConfig ModelConfig::named(const std::string& name) {
  std::string n = name;
  std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return std::toupper(c); });
  if (n == "T") return variant_t();
  if (n == "S") return variant_s();
  if (n == "B") return variant_b();
  throw ConfigError("unknown variant '" + name + "'; valid names: T, S, B");
}

ModelConfig ModelConfig::reduced_test() {
  ModelConfig c;
  c.variant = "test";
  c.stem_width = 8;
  c.stages = {StageSpec{1, 8, 2}, StageSpec{1, 16, 2}, StageSpec{1, 32, 2}};
  c.window = 2;
  c.global_tokens = 2;
  c.num_classes = 10;
  return c;
}

void ModelConfig::validate() const {
  std::vector<std::string> bad;
  if (stem_width < 1) bad.push_back("stem width must be positive");
  if (stem_width != stages[0].width) {
    bad.push_back("stem width " + std::to_string(stem_width) + " must equal stage 1 width " +
                  std::to_string(stages[0].width));
  }
  for (size_t i = 0; i < stages.size(); ++i) {
    const auto& st = stages[i];
    const std::string tag = "stage " + std::to_string(i + 1);
    if (st.depth < 1) bad.push_back(tag + ": depth must be >= 1");
    if (st.width < 1) bad.push_back(tag + ": width must be positive");
    if (st.heads < 1 || (st.width > 0 && st.width % st.heads != 0)) {
      bad.push_back(tag + ": heads " + std::to_string(st.heads) + " must divide width " +
                    std::to_string(st.width));
    }
    if (i > 0 && st.width != 2 * stages[i - 1].width) {
      bad.push_back(tag + ": width must double the previous stage's width");
    }
    const int64_t gate_width =
        insertion == BiDimInsertion::hidden ? expansion * st.width : st.width;
    if ((toggles.spatial || toggles.channel) && reduction > 0 && gate_width % reduction != 0) {
      bad.push_back(tag + ": reduction " + std::to_string(reduction) +
                    " must divide the gate width " + std::to_string(gate_width));
    }
  }
  if (window < 1) bad.push_back("window size must be positive");
  if (global_tokens < 0) bad.push_back("global token count must be >= 0");
  if (expansion < 1) bad.push_back("ffn expansion must be >= 1");
  if (reduction < 1) bad.push_back("gate reduction must be >= 1");
  if (num_classes < 1) bad.push_back("class count must be positive");
  if (!toggles.local && !toggles.global_attn) {
    bad.push_back("local and global attention cannot both be disabled");
  }
  if (!toggles.local && global_tokens == 0) {
    bad.push_back("local attention disabled but no global tokens configured");
  }
  if (!bad.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& b : bad) msg += "\n  - " + b;
    throw ConfigError(msg);
  }
}

int64_t ModelConfig::effective_window(int64_t h, int64_t w) const {
  return std::min(window, std::min(h, w));
}

namespace {

const char* act_name(Act a) { return a == Act::gelu ? "gelu" : "relu"; }
const char* insertion_name(BiDimInsertion i) {
  return i == BiDimInsertion::hidden ? "hidden" : "input";
}

}  // namespace

std::string ModelConfig::canonical_text() const {
  std::ostringstream os;
  os << "format=1\n";
  os << "variant=" << variant << "\n";
  os << "stem_width=" << stem_width << "\n";
  for (size_t i = 0; i < stages.size(); ++i) {
    os << "stage" << (i + 1) << ".depth=" << stages[i].depth << "\n";
    os << "stage" << (i + 1) << ".width=" << stages[i].width << "\n";
    os << "stage" << (i + 1) << ".heads=" << stages[i].heads << "\n";
  }
  os << "window=" << window << "\n";
  os << "global_tokens=" << global_tokens << "\n";
  os << "expansion=" << expansion << "\n";
  os << "reduction=" << reduction << "\n";
  os << "act=" << act_name(act) << "\n";
  os << "bidim_insertion=" << insertion_name(insertion) << "\n";
  os << "toggle_local=" << (toggles.local ? 1 : 0) << "\n";
  os << "toggle_global=" << (toggles.global_attn ? 1 : 0) << "\n";
  os << "toggle_spatial=" << (toggles.spatial ? 1 : 0) << "\n";
  os << "toggle_channel=" << (toggles.channel ? 1 : 0) << "\n";
  os << "classes=" << num_classes << "\n";
  return os.str();
}

ModelConfig ModelConfig::parse(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("config: malformed line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto take = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError("config: missing key '" + key + "'");
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  auto take_int = [&](const std::string& key) {
    const std::string v = take(key);
    try {
      size_t pos = 0;
      const long long n = std::stoll(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return static_cast<int64_t>(n);
    } catch (const std::exception&) {
      throw FormatError("config: key '" + key + "' has non-integer value '" + v + "'");
    }
  };

  if (take("format") != "1") throw FormatError("config: unsupported format version");
  ModelConfig c;
  c.variant = take("variant");
  c.stem_width = take_int("stem_width");
  for (size_t i = 0; i < c.stages.size(); ++i) {
    const std::string p = "stage" + std::to_string(i + 1) + ".";
    c.stages[i].depth = take_int(p + "depth");
    c.stages[i].width = take_int(p + "width");
    c.stages[i].heads = take_int(p + "heads");
  }
  c.window = take_int("window");
  c.global_tokens = take_int("global_tokens");
  c.expansion = take_int("expansion");
  c.reduction = take_int("reduction");
  const std::string act = take("act");
  if (act == "gelu") {
    c.act = Act::gelu;
  } else if (act == "relu") {
    c.act = Act::relu;
  } else {
    throw FormatError("config: unknown activation '" + act + "'");
  }
  const std::string ins = take("bidim_insertion");
  if (ins == "input") {
    c.insertion = BiDimInsertion::input;
  } else if (ins == "hidden") {
    c.insertion = BiDimInsertion::hidden;
  } else {
    throw FormatError("config: unknown insertion point '" + ins + "'");
  }
  c.toggles.local = take_int("toggle_local") != 0;
  c.toggles.global_attn = take_int("toggle_global") != 0;
  c.toggles.spatial = take_int("toggle_spatial") != 0;
  c.toggles.channel = take_int("toggle_channel") != 0;
  c.num_classes = take_int("classes");
  if (!kv.empty()) throw FormatError("config: unknown key '" + kv.begin()->first + "'");
  c.validate();
  return c;
}

uint64_t ModelConfig::digest() const { return fnv1a64(canonical_text()); }

std::string ModelConfig::digest_hex() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(digest()));
  return std::string(buf);
}

std::string ModelConfig::describe_table() const {
  std::ostringstream os;
  os << "LightViT-" << variant << " (window S=" << window << ", global tokens T=" << global_tokens
     << ")\n";
  os << "Stage       Stride  Config\n";
  os << "S0: Stem    1/8     C=" << stem_width << "\n";
  const int64_t strides[3] = {8, 16, 32};
  for (size_t i = 0; i < stages.size(); ++i) {
    os << "S" << (i + 1) << ": Block   1/" << strides[i] << (strides[i] < 10 ? "     " : "    ")
       << "B=" << stages[i].depth << " C=" << stages[i].width << " H=" << stages[i].heads << "\n";
  }
  os << "Toggles: local=" << (toggles.local ? "on" : "off")
     << " global=" << (toggles.global_attn ? "on" : "off")
     << " spatial=" << (toggles.spatial ? "on" : "off")
     << " channel=" << (toggles.channel ? "on" : "off") << "\n";
  os << "FFN: expansion=" << expansion << " reduction=" << reduction << " act=" << act_name(act)
     << " insertion=" << insertion_name(insertion) << "\n";
  os << "Classes: " << num_classes << "\n";
  return os.str();
}

}  // namespace lightvit
