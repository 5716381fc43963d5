"""
Walking one request through the pipeline
========================================

A request is stored, mapped against a small registry, filtered, scored and
ranked. Each step is done by hand first and then by the one-call entry point.
"""

from riabroker import (
    FilterCriteria,
    RegistryIndex,
    RequestStore,
    ServiceDescriptor,
    ServiceRequest,
    filter_candidates,
    map_request,
    score,
    select_top,
    select_with_strategy,
)

# %%
# A registry of five providers. Keywords are normalized on construction.
registry = RegistryIndex()
registry.register_many([
    ServiceDescriptor("wx-fast", "Weather", ["weather", "forecast"], qos_latency_ms=20, qos_availability=0.999),
    ServiceDescriptor("wx-slow", "Weather", ["weather", "forecast", "radar"], qos_latency_ms=900),
    ServiceDescriptor("news", "News", ["news", "weather", "sports"], qos_latency_ms=60),
    ServiceDescriptor("fx", "Currency", ["currency", "rate"]),
    ServiceDescriptor("maps", "Maps", ["map", "route"]),
])
print("registry version", registry.version)

# %%
# Storing the request assigns an id; resubmitting it only bumps merge_count.
store = RequestStore()
rid, _ = store.ingest(ServiceRequest("Weather-Forecast for today", requester="alice", priority_hint=4))
store.ingest(ServiceRequest("forecast weather today, for", requester="alice"))
request = store.get(rid).request
print("tokens", request.tokens, "merges", store.get(rid).merge_count)

# %%
# Mapping keeps descriptors sharing at least one token, each with its
# Jaccard relevance. D is the registry size and M the descriptors dropped.
candidates, d, m = map_request(request, registry)
for c in candidates:
    print(f"  {c.descriptor_id:8s} relevance {c.relevance:.3f}")
print("D =", d, "M =", m)

# %%
# Filtering thresholds on relevance and orders best first.
kept, f = filter_candidates(candidates, FilterCriteria(min_relevance=0.3))
print("kept", [c.descriptor_id for c in kept], "F =", f, "S =", (d - m - f) / 3)

# %%
# Scoring folds declared latency and availability in with relevance.
scored = [score(c, registry.get(c.descriptor_id), request) for c in kept]
for s in select_top(scored, k=3):
    print(f"  {s.descriptor_id:8s} score {s.score:.4f} components {tuple(round(x, 3) for x in s.components)}")

# %%
# The same thing in one call; the store follows the request to Selected and
# the filtered-out candidates are kept as the reserve.
result = select_with_strategy(request, registry, "expected", FilterCriteria(min_relevance=0.3), store=store)
print("chosen", result.chosen, "reserve", result.reserve, "state", store.get(rid).state.value)
t = result.trace
print("trace D/M/F/S", t.d_count, t.m_removed, t.f_removed, t.s_aggregate)

# %%
# Relevance-only ranking, and the exhaustive scan that scores everything.
for strategy in ("normal", "exited"):
    r = select_with_strategy(request, registry, strategy)
    print(strategy, [(s.descriptor_id, round(s.score, 3)) for s in r.ranked[:5]])
