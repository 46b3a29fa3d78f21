#include "mobintent/world.hpp"

namespace mobintent {

void Trajectory::validate(const World& world) const {
  require(records.size() >= 2, "trajectory must have length >= 2");
  const City& c = world.city(city);
  std::int64_t prev = records.front().t;
  c.index_of(records.front().location_id);
  for (std::size_t i = 1; i < records.size(); ++i) {
    require(records[i].t > prev, "trajectory timestamps must be strictly increasing");
    prev = records[i].t;
    c.index_of(records[i].location_id);
  }
  if (!ground_truth_intentions.empty())
    require(ground_truth_intentions.size() == travels(),
            "ground-truth intentions must have one entry per travel");
  if (scenario == Scenario::Normal)
    require(disaster_level.ordinal == 0, "normal-scenario trajectory must carry ordinal 0");
}

}  // namespace mobintent
