#include "mot/vocab.hpp"

namespace mot {

Vocab::Vocab() {
  chars_.assign(3, '\0');  // PAD, BOS, EOS
  auto push = [this](char c) { chars_.push_back(c); };
  push('\n');
  push(' ');
  for (char c = '0'; c <= '9'; ++c) push(c);
  for (char c : std::string_view("+-*=<>:|()")) push(c);
  for (char c = 'a'; c <= 'z'; ++c) push(c);
  for (char c = 'A'; c <= 'Z'; ++c) push(c);

  for (int& v : lookup_) v = -1;
  for (int i = 3; i < static_cast<int>(chars_.size()); ++i) {
    lookup_[static_cast<unsigned char>(chars_[i])] = i;
  }
}

int Vocab::id(char c) const {
  int v = lookup_[static_cast<unsigned char>(c)];
  if (v < 0) {
    fail(Errc::vocabulary,
         "character not in vocabulary: 0x" + std::to_string(static_cast<unsigned char>(c)));
  }
  return v;
}

char Vocab::character(int id) const {
  require(id >= 0 && id < size(), Errc::vocabulary, "token id out of range");
  return chars_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(std::string_view text) const {
  std::vector<int> out;
  out.reserve(text.size());
  for (char c : text) out.push_back(id(c));
  return out;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
  std::string out;
  out.reserve(ids.size());
  for (int t : ids) {
    char c = character(t);
    if (c != '\0') out.push_back(c);
  }
  return out;
}

const Vocab& vocab() {
  static const Vocab v;
  return v;
}

TokenizedExample make_example(std::string_view prompt, std::string_view target) {
  const Vocab& v = vocab();
  TokenizedExample ex;
  ex.tokens.reserve(prompt.size() + target.size() + 3);
  ex.tokens.push_back(Vocab::kBos);
  for (char c : prompt) ex.tokens.push_back(v.id(c));
  ex.tokens.push_back(v.id('\n'));
  ex.prompt_len = static_cast<int>(ex.tokens.size());
  for (char c : target) ex.tokens.push_back(v.id(c));
  ex.tokens.push_back(Vocab::kEos);
  ex.mask.assign(ex.tokens.size(), 0);
  for (std::size_t i = static_cast<std::size_t>(ex.prompt_len); i < ex.tokens.size(); ++i) {
    ex.mask[i] = 1;
  }
  return ex;
}

std::vector<int> make_prompt_prefix(std::string_view prompt) {
  const Vocab& v = vocab();
  std::vector<int> out;
  out.reserve(prompt.size() + 2);
  out.push_back(Vocab::kBos);
  for (char c : prompt) out.push_back(v.id(c));
  out.push_back(v.id('\n'));
  return out;
}

}  // namespace mot
