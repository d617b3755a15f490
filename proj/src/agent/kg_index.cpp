#include "guild/agent/kg_index.hpp"

namespace guild::agent {

KgIndex::KgIndex(const tw::GameSpec& spec) {
  auto claim = [&](const story::Triple& t) { index_.emplace(story::to_string(t), bits_++); };
  for (const auto& room : spec.rooms) claim({"you", "in", room.id});
  for (const auto& e : spec.entities) {
    if (e.creature) continue;
    for (const auto& room : spec.rooms) claim({e.name, "in", room.id});
  }
  for (const auto& e : spec.entities)
    if (!e.creature && e.portable) claim({"you", "have", e.name});
  for (const auto& e : spec.entities)
    if (e.creature) claim({"you", "hit", e.name});
}

int KgIndex::bit(const story::Triple& t) const {
  auto it = index_.find(story::to_string(t));
  return it == index_.end() ? -1 : it->second;
}

std::vector<float> KgIndex::encode(const story::WorldKG& kg) const {
  std::vector<float> out;
  encode_into(kg, out);
  return out;
}

void KgIndex::encode_into(const story::WorldKG& kg, std::vector<float>& out) const {
  out.assign(size_t(bits_), 0.0f);
  for (const auto& t : kg.all()) {
    int b = bit(t);
    if (b >= 0) out[size_t(b)] = 1.0f;
  }
}

}  // namespace guild::agent
