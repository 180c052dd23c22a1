#include <algorithm>
#include <array>
#include <cmath>

#include "kads/corpus.hpp"
#include "kads/error.hpp"

namespace kads {
namespace {

constexpr std::array<const char*, 16> kVerbs = {"search", "select",  "verify", "update", "validate", "record",
                                                "offer",  "notify",  "check",  "enter",  "send",     "apply",
                                                "log",    "confirm", "reset",  "pull"};
constexpr std::array<const char*, 16> kNouns = {"faq",     "shirt",   "account",    "order",    "address", "password",
                                                "refund",  "payment", "membership", "shipping", "policy",  "status",
                                                "identity", "coupon", "subscription", "timing"};
// Verbs whose actions carry a slot value taken from the customer.
constexpr std::array<const char*, 5> kValuedVerbs = {"verify", "enter", "record", "validate", "update"};

constexpr std::array<const char*, 16> kPurposes = {"return",  "exchange", "track",  "cancel", "repair",  "insure",
                                                   "upgrade", "register", "replace", "resize", "refill", "gift",
                                                   "rent",    "donate",   "recycle", "reserve"};
constexpr std::array<const char*, 16> kTopics = {"jacket", "boots", "jeans", "laptop", "phone",      "tablet",
                                                 "camera", "watch", "sofa",  "lamp",   "headphones", "desk",
                                                 "bike",   "tent",  "guitar", "printer"};
constexpr std::array<const char*, 16> kNames = {"anna", "ben",  "carla", "dmitri", "elena", "farid", "greta", "hugo",
                                                "ines", "jonas", "kira", "liam",   "maya",  "nico",  "olga",  "pablo"};

constexpr std::array<const char*, 3> kIntroTemplates = {"hi i want to {p} my {t}", "hello can you help me {p} a {t}",
                                                        "i need to {p} the {t} i bought"};
constexpr std::array<const char*, 5> kAgentSteps = {"let me check that", "one moment please", "sure i can do that",
                                                    "give me a second", "okay let me see"};
constexpr std::array<const char*, 4> kAcks = {"ok", "thanks", "great", "alright"};

constexpr std::size_t kMinDocLen = 3;
constexpr std::size_t kMaxDocLen = 5;

template <std::size_t N>
const char* pick(const std::array<const char*, N>& pool, Rng& rng) {
  return pool[rng.below(N)];
}

std::string fill(std::string tmpl, const std::string& purpose, const std::string& topic) {
  auto replace = [&tmpl](const std::string& key, const std::string& value) {
    const auto pos = tmpl.find(key);
    if (pos != std::string::npos) tmpl.replace(pos, key.size(), value);
  };
  replace("{p}", purpose);
  replace("{t}", topic);
  return tmpl;
}

bool takes_value(const std::string& bslot) {
  const std::string verb = bslot.substr(0, bslot.find(' '));
  return std::any_of(kValuedVerbs.begin(), kValuedVerbs.end(), [&](const char* v) { return verb == v; });
}

std::vector<double> zipf(std::size_t n, double s) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = 1.0 / std::pow(static_cast<double>(i + 1), s);
  return w;
}

std::string padded(std::size_t i, std::size_t width) {
  std::string s = std::to_string(i);
  return std::string(width > s.size() ? width - s.size() : 0, '0') + s;
}

}  // namespace

Corpus synth_corpus(std::size_t n_docs, std::size_t n_dialogues, std::size_t bslot_vocab_size, std::uint64_t seed) {
  if (n_docs < 2) throw ConfigError("synth_corpus: n_docs must be >= 2");
  if (n_dialogues < n_docs) throw ConfigError("synth_corpus: n_dialogues must be >= n_docs");
  if (bslot_vocab_size < n_docs + kMinDocLen - 1 || bslot_vocab_size > kVerbs.size() * kNouns.size())
    throw ConfigError("synth_corpus: b-slot vocabulary of " + std::to_string(bslot_vocab_size) + " cannot build " +
                      std::to_string(n_docs) + " distinct documents (need " + std::to_string(n_docs + kMinDocLen - 1) +
                      ".." + std::to_string(kVerbs.size() * kNouns.size()) + ")");
  if (n_docs > kPurposes.size() * kTopics.size()) throw ConfigError("synth_corpus: too many documents requested");

  Rng rng = Rng::stream(seed, "synth");

  // B-slot inventory: distinct verb-noun pairs in a seeded order. The first
  // n_docs open one document each; the rest form a shared pool whose order
  // fixes the Zipf rank.
  std::vector<std::string> combos;
  for (const char* v : kVerbs)
    for (const char* n : kNouns) combos.push_back(std::string(v) + " " + n);
  rng.shuffle(std::span<std::string>(combos));
  combos.resize(bslot_vocab_size);
  const std::vector<std::string> shared(combos.begin() + static_cast<std::ptrdiff_t>(n_docs), combos.end());
  const std::vector<double> shared_weights = zipf(shared.size(), 0.5);

  // Intents come from a purpose x topic grid only slightly larger than the
  // document count, so every intent word is shared by several documents.
  std::size_t grid = 2;
  while (grid < kPurposes.size() && grid * grid * 4 < n_docs * 5) ++grid;
  std::vector<std::string> purposes(kPurposes.begin(), kPurposes.end());
  std::vector<std::string> topics(kTopics.begin(), kTopics.end());
  rng.shuffle(std::span<std::string>(purposes));
  rng.shuffle(std::span<std::string>(topics));
  std::vector<std::pair<std::string, std::string>> intents;
  for (std::size_t p = 0; p < grid; ++p)
    for (std::size_t t = 0; t < grid; ++t) intents.emplace_back(purposes[p], topics[t]);
  rng.shuffle(std::span<std::pair<std::string, std::string>>(intents));

  // Every document starts with its own opener, so any non-empty prefix of its
  // steps matches it and no other document under the overlap heuristic.
  std::vector<Document> docs;
  for (std::size_t i = 0; i < n_docs; ++i) {
    const std::size_t len = std::min(kMinDocLen + rng.below(kMaxDocLen - kMinDocLen + 1), shared.size() + 1);
    std::vector<double> w = shared_weights;
    Document doc;
    doc.id = "doc-" + padded(i, 2);
    doc.intent_text = intents[i].first + " " + intents[i].second;
    doc.bslots.push_back(combos[i]);
    while (doc.bslots.size() < len) {
      const std::size_t j = rng.categorical(w);
      doc.bslots.push_back(shared[j]);
      w[j] = 0.0;
    }
    docs.push_back(std::move(doc));
  }

  const std::vector<double> doc_weights = zipf(n_docs, 0.5);
  Corpus corpus;
  corpus.dataset = "synthetic";
  const std::size_t n_train = n_dialogues * 8 / 10;
  const std::size_t n_dev = (n_dialogues - n_train) / 2;
  for (std::size_t k = 0; k < n_dialogues; ++k) {
    // The first n_docs dialogues cover every document once; the rest follow
    // the long-tailed popularity.
    const std::size_t di = k < n_docs ? k : rng.categorical(doc_weights);
    const Document& doc = docs[di];
    const std::string& purpose = intents[di].first;
    const std::string& topic = intents[di].second;

    Dialogue d;
    d.id = "synth-" + padded(k, 5);
    d.turns.push_back(Turn::agent("hello! how can i help you today?"));
    d.turns.push_back(Turn::customer(fill(pick(kIntroTemplates, rng), purpose, topic)));
    // Half of the dialogues end early, after a prefix of the document's steps.
    std::size_t n_steps = doc.bslots.size();
    if (rng.bernoulli(0.5)) n_steps = 1 + rng.below(n_steps - 1);
    for (std::size_t step = 0; step < n_steps; ++step) {
      const std::string& b = doc.bslots[step];
      Action a{b, {}};
      if (takes_value(b)) {
        const std::string value = std::string(pick(kNames, rng)) + "@mail.com";
        d.turns.push_back(Turn::agent("can i have your email?"));
        d.turns.push_back(Turn::customer("sure it is " + value));
        a.values.push_back(value);
      } else {
        d.turns.push_back(Turn::agent(pick(kAgentSteps, rng)));
      }
      d.turns.push_back(Turn::act(std::move(a)));
      if (rng.bernoulli(0.5)) d.turns.push_back(Turn::customer(pick(kAcks, rng)));
    }
    d.intent_labels.push_back({1, doc.id});
    if (k < n_train)
      corpus.split.train.push_back(std::move(d));
    else if (k < n_train + n_dev)
      corpus.split.dev.push_back(std::move(d));
    else
      corpus.split.test.push_back(std::move(d));
  }
  corpus.kb = KnowledgeBase(std::move(docs));
  return corpus;
}

}  // namespace kads
