#include "cadtext/synthlab.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <stdexcept>
#include <unordered_set>

#include "cadtext/errors.hpp"
#include "cadtext/random.hpp"

namespace cadtext {

namespace {

struct ThemeSeed {
  const char* name;
  std::vector<std::string> heads;
  std::vector<std::string> nouns;
};

const std::vector<ThemeSeed>& theme_seeds() {
  static const std::vector<ThemeSeed> seeds = {
      {"fasteners",
       {"bolt", "screw", "nut", "washer", "rivet", "anchor", "clip", "pin"},
       {"shank", "thread", "head", "collar", "tip", "slot", "flange", "ring"}},
      {"furniture",
       {"chair", "table", "desk", "shelf", "cabinet", "stool", "bench", "drawer"},
       {"leg", "seat", "backrest", "top", "rail", "panel", "knob", "apron"}},
      {"electronics",
       {"pcb", "sensor", "relay", "module", "controller", "charger", "display", "antenna"},
       {"board", "connector", "capacitor", "resistor", "header", "socket", "trace", "shield"}},
      {"vehicles",
       {"car", "truck", "bike", "drone", "rover", "cart", "scooter", "trailer"},
       {"wheel", "axle", "chassis", "fender", "frame", "hub", "bumper", "mount"}},
      {"robotics",
       {"robot", "gripper", "arm", "actuator", "manipulator", "servo", "effector", "joint"},
       {"link", "finger", "bracket", "gear", "motor", "encoder", "base", "wrist"}},
      {"plumbing",
       {"valve", "pipe", "faucet", "pump", "fitting", "nozzle", "manifold", "tap"},
       {"seal", "gasket", "spout", "stem", "body", "inlet", "outlet", "handle"}},
      {"aerospace",
       {"rocket", "wing", "satellite", "glider", "propeller", "fuselage", "thruster", "nacelle"},
       {"spar", "rib", "skin", "fin", "nosecone", "strut", "bulkhead", "stringer"}},
      {"tools",
       {"wrench", "hammer", "pliers", "clamp", "vise", "drill", "saw", "chisel"},
       {"jaw", "grip", "blade", "shaft", "trigger", "chuck", "lever", "spring"}},
      {"housing",
       {"enclosure", "case", "box", "housing", "cover", "lid", "shell", "casing"},
       {"wall", "hinge", "latch", "vent", "boss", "tab", "gusset", "window"}},
      {"kitchen",
       {"kettle", "blender", "toaster", "mixer", "grinder", "oven", "juicer", "cooker"},
       {"jar", "bowl", "whisk", "dial", "tray", "element", "basket", "spindle"}},
      {"energy",
       {"turbine", "generator", "battery", "inverter", "transformer", "panel", "engine", "compressor"},
       {"rotor", "stator", "blade", "cell", "coil", "piston", "crank", "cylinder"}},
      {"optics",
       {"camera", "lens", "telescope", "microscope", "projector", "lamp", "laser", "scope"},
       {"barrel", "mirror", "prism", "filter", "eyepiece", "aperture", "diffuser", "reflector"}},
  };
  return seeds;
}

const std::vector<std::string>& modifier_seeds() {
  static const std::vector<std::string> m = {
      "small", "large", "mini", "heavy", "light", "compact", "modular", "custom", "standard", "simple",
      "rear", "front", "left", "right", "upper", "lower", "main", "spare", "test", "final",
      "new", "old", "basic", "advanced", "portable", "rugged", "steel", "plastic", "wooden", "aluminum"};
  return m;
}

const std::vector<std::string>& noise_seeds() {
  static const std::vector<std::string> n = {
      "part", "piece", "component", "item", "element1", "misc", "generic", "unnamed", "body1", "solid",
      "feature", "block", "plate", "extrude", "sketch", "revolve", "fillet", "chamfer", "pattern", "mirror1",
      "default", "sample", "object", "assembly", "sub", "level", "layer", "group", "unit", "section"};
  return n;
}

// Pronounceable pseudo-words, unique against `taken`.
std::vector<std::string> pseudo_words(std::size_t count, Rng& rng, std::set<std::string>& taken) {
  static const char* onsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
                                 "br", "kr", "pl", "st", "tr", "gl"};
  static const char* vowels[] = {"a", "e", "i", "o", "u", "ai", "ou"};
  static const char* codas[] = {"", "", "n", "r", "s", "k", "l", "x"};
  std::vector<std::string> out;
  while (out.size() < count) {
    const std::size_t syllables = 2 + rng.below(2);
    std::string w;
    for (std::size_t s = 0; s < syllables; ++s) {
      w += onsets[rng.below(std::size(onsets))];
      w += vowels[rng.below(std::size(vowels))];
    }
    w += codas[rng.below(std::size(codas))];
    if (taken.insert(w).second) out.push_back(w);
  }
  return out;
}

std::string synth_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "synth-%06zu", i);
  return buf;
}

std::string record_key(const AssemblyRecord& r) {
  auto parts = r.part_names;
  std::sort(parts.begin(), parts.end());
  std::string key = r.assembly_name;
  for (const auto& p : parts) key += '\x1f' + p;
  return key;
}

const char* kCountWords[] = {"zero", "one", "two", "three", "four", "five", "six", "seven", "eight",
                             "nine", "ten", "eleven", "twelve"};

}  // namespace

SynthSpec SynthSpec::defaults() {
  constexpr std::size_t kHeadsPerTheme = 80;
  constexpr std::size_t kNounsPerTheme = 40;
  constexpr std::size_t kModifiers = 200;
  constexpr std::size_t kNoise = 400;

  SynthSpec spec;
  std::set<std::string> taken;
  for (const auto& t : theme_seeds()) {
    taken.insert(t.heads.begin(), t.heads.end());
    taken.insert(t.nouns.begin(), t.nouns.end());
  }
  taken.insert(modifier_seeds().begin(), modifier_seeds().end());
  taken.insert(noise_seeds().begin(), noise_seeds().end());

  // Fixed pool seed: the vocabulary belongs to the SynthSpec, not to the run seed.
  Rng rng(0x5eedc0de);
  // Shared seed words ("panel", "blade") stay in one pool only.
  std::set<std::string> used;
  for (const auto& t : theme_seeds()) {
    Theme theme;
    theme.name = t.name;
    for (const auto& w : t.heads)
      if (used.insert(w).second) theme.heads.push_back(w);
    for (const auto& w : t.nouns)
      if (used.insert(w).second) theme.part_nouns.push_back(w);
    auto extra_heads = pseudo_words(kHeadsPerTheme - theme.heads.size(), rng, taken);
    theme.heads.insert(theme.heads.end(), extra_heads.begin(), extra_heads.end());
    auto extra_nouns = pseudo_words(kNounsPerTheme - theme.part_nouns.size(), rng, taken);
    theme.part_nouns.insert(theme.part_nouns.end(), extra_nouns.begin(), extra_nouns.end());
    spec.themes.push_back(std::move(theme));
  }
  for (const auto& w : modifier_seeds())
    if (used.insert(w).second) spec.modifiers.push_back(w);
  auto extra_mod = pseudo_words(kModifiers - spec.modifiers.size(), rng, taken);
  spec.modifiers.insert(spec.modifiers.end(), extra_mod.begin(), extra_mod.end());
  for (const auto& w : noise_seeds())
    if (used.insert(w).second) spec.noise.push_back(w);
  auto extra_noise = pseudo_words(kNoise - spec.noise.size(), rng, taken);
  spec.noise.insert(spec.noise.end(), extra_noise.begin(), extra_noise.end());
  return spec;
}

void SynthSpec::validate() const {
  if (!(overlap_strength >= 0.0 && overlap_strength <= 1.0))
    throw ConfigError("overlap_strength must lie in [0, 1]");
  if (themes.empty()) throw ConfigError("synthetic spec needs at least one theme");
  for (const auto& t : themes)
    if (t.heads.empty() || t.part_nouns.empty())
      throw ConfigError("theme '" + t.name + "' has an empty word pool");
  if (modifiers.empty()) throw ConfigError("modifier pool is empty");
  if (noise.empty()) throw ConfigError("noise pool is empty");
  if (min_parts == 0 || min_parts > max_parts) throw ConfigError("parts range must satisfy 1 <= min_parts <= max_parts");
}

std::size_t SynthSpec::vocabulary_size() const {
  std::set<std::string> words(modifiers.begin(), modifiers.end());
  words.insert(noise.begin(), noise.end());
  for (const auto& t : themes) {
    words.insert(t.heads.begin(), t.heads.end());
    words.insert(t.part_nouns.begin(), t.part_nouns.end());
  }
  return words.size();
}

nlohmann::json SynthSpec::to_json() const {
  nlohmann::json j = {{"n_assemblies", n_assemblies},   {"min_parts", min_parts},
                      {"max_parts", max_parts},         {"overlap_strength", overlap_strength},
                      {"with_descriptions", with_descriptions}, {"seed", seed}};
  const auto d = defaults();
  bool default_pools = modifiers == d.modifiers && noise == d.noise && themes.size() == d.themes.size();
  for (std::size_t i = 0; default_pools && i < themes.size(); ++i)
    default_pools = themes[i].name == d.themes[i].name && themes[i].heads == d.themes[i].heads &&
                    themes[i].part_nouns == d.themes[i].part_nouns;
  if (!default_pools) {
    nlohmann::json ts = nlohmann::json::array();
    for (const auto& t : themes) ts.push_back({{"name", t.name}, {"heads", t.heads}, {"part_nouns", t.part_nouns}});
    j["themes"] = ts;
    j["modifiers"] = modifiers;
    j["noise"] = noise;
  }
  return j;
}

SynthSpec SynthSpec::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("synthetic spec must be a JSON object");
  static const std::unordered_set<std::string> known = {"n_assemblies", "min_parts", "max_parts",
                                                        "overlap_strength", "with_descriptions", "seed",
                                                        "themes", "modifiers", "noise"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError(key + ": unknown synthetic spec field");
  SynthSpec s = defaults();
  try {
    s.n_assemblies = j.value("n_assemblies", s.n_assemblies);
    s.min_parts = j.value("min_parts", s.min_parts);
    s.max_parts = j.value("max_parts", s.max_parts);
    s.overlap_strength = j.value("overlap_strength", s.overlap_strength);
    s.with_descriptions = j.value("with_descriptions", s.with_descriptions);
    s.seed = j.value("seed", s.seed);
    if (j.contains("themes")) {
      s.themes.clear();
      for (const auto& t : j.at("themes"))
        s.themes.push_back({t.at("name").get<std::string>(), t.at("heads").get<std::vector<std::string>>(),
                            t.at("part_nouns").get<std::vector<std::string>>()});
    }
    if (j.contains("modifiers")) s.modifiers = j.at("modifiers").get<std::vector<std::string>>();
    if (j.contains("noise")) s.noise = j.at("noise").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid synthetic spec: ") + e.what());
  }
  s.validate();
  return s;
}

std::vector<AssemblyRecord> generate(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::vector<AssemblyRecord> out;
  out.reserve(spec.n_assemblies);
  std::unordered_set<std::string> keys;
  std::size_t failures = 0;
  while (out.size() < spec.n_assemblies) {
    const auto& theme = spec.themes[rng.below(spec.themes.size())];
    const auto& head = theme.heads[rng.below(theme.heads.size())];
    AssemblyRecord r;
    r.id = synth_id(out.size() + 1);
    r.assembly_name = spec.modifiers[rng.below(spec.modifiers.size())] + " " + head;
    const std::size_t n_parts = spec.min_parts + rng.below(spec.max_parts - spec.min_parts + 1);
    std::unordered_set<std::string> seen;
    for (std::size_t attempt = 0; r.part_names.size() < n_parts && attempt < 20 * n_parts; ++attempt) {
      std::string first = rng.bernoulli(spec.overlap_strength) ? head : spec.noise[rng.below(spec.noise.size())];
      std::string part = first + " " + theme.part_nouns[rng.below(theme.part_nouns.size())];
      if (seen.insert(part).second) r.part_names.push_back(std::move(part));
    }
    if (r.part_names.size() < spec.min_parts || !keys.insert(record_key(r)).second) {
      if (++failures > 100 * (spec.n_assemblies + 10))
        throw ConfigError("synthetic pools are too small to produce " + std::to_string(spec.n_assemblies) +
                          " distinct assemblies");
      continue;
    }
    if (spec.with_descriptions)
      r.description = std::string(std::string_view("aeiou").find(theme.name[0]) != std::string_view::npos ? "an " : "a ") +
                      theme.name + " assembly with " +
                      (r.part_names.size() < std::size(kCountWords) ? kCountWords[r.part_names.size()]
                                                                     : std::to_string(r.part_names.size())) +
                      " parts";
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<std::size_t> oracle_rank(const Matrix<double>& a, const Matrix<double>& p) {
  if (a.rows() != p.rows() || a.cols() != p.cols()) throw std::invalid_argument("oracle_rank: shape mismatch");
  const std::size_t n = a.rows(), d = a.cols();
  std::vector<std::size_t> ranks(n, 0);
  for (std::size_t item = 0; item < n; ++item) {
    double true_score = 0;
    for (std::size_t k = 0; k < d; ++k) true_score += a(item, k) * p(item, k);
    std::size_t rank = 0;
    for (std::size_t other = 0; other < n; ++other) {
      if (other == item) continue;
      double s = 0;
      for (std::size_t k = 0; k < d; ++k) s += a(other, k) * p(item, k);
      if (s > true_score || (s == true_score && other < item)) ++rank;
    }
    ranks[item] = rank;
  }
  return ranks;
}

std::vector<AssemblyRecord> oracle_dedup(const std::vector<AssemblyRecord>& records) {
  std::vector<AssemblyRecord> kept;
  for (const auto& r : records) {
    AssemblyRecord u = r;
    u.part_names.clear();
    for (const auto& part : r.part_names) {
      bool dup = false;
      for (const auto& q : u.part_names) dup = dup || q == part;
      if (!dup) u.part_names.push_back(part);
    }
    bool duplicate = false;
    for (const auto& k : kept) {
      if (k.assembly_name != u.assembly_name || k.part_names.size() != u.part_names.size()) continue;
      bool all_found = true;
      for (const auto& part : u.part_names) {
        bool found = false;
        for (const auto& q : k.part_names) found = found || q == part;
        all_found = all_found && found;
      }
      if (all_found) {
        duplicate = true;
        break;
      }
    }
    if (!duplicate) kept.push_back(std::move(u));
  }
  return kept;
}

}  // namespace cadtext
