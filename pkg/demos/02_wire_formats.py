"""
The three XML formats
=====================

Envelopes, query documents and WSDL-subset descriptors, read from the fixture
files and written back in canonical form.
"""

from pathlib import Path

from riabroker import xmlsubset
from riabroker.errors import BadPort, BrokerError
from riabroker.wire import (
    parse_descriptor,
    parse_envelope,
    parse_query,
    parse_result,
    serialize_descriptor,
    serialize_envelope,
    serialize_result,
)

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"

# %%
# The envelope fixture carries only a message id in its body, so the body
# text doubles as the query.
env = parse_envelope((FIXTURES / "soap_request.xml").read_bytes())
print(env)
print(serialize_envelope(env).decode())

# %%
# The query fixture names a receiving port outside 1..65535 and is rejected
# with a typed error. The parsed tree still shows its fields.
raw = (FIXTURES / "query.xml").read_bytes()
tree = xmlsubset.parse(raw)
print({name: tree.find(name).text for name in ("requester", "portname", "ipaddress", "recport", "country")})
try:
    parse_query(raw)
except BadPort as exc:
    print("BadPort:", exc)
print(parse_query(raw.replace(b"45665677", b"8080")))

# %%
# Descriptors: binding name plus operation names become keywords, and QoS
# falls back to 100 ms / 0.99 when the document carries none.
d = parse_descriptor((FIXTURES / "wsdl_weather.xml").read_bytes())
print(d.name, sorted(d.keywords), d.qos_latency_ms, d.qos_availability)
canonical = serialize_descriptor(d)
print(canonical.decode())
assert parse_descriptor(canonical) == d

# %%
# Malformed input always yields a typed error, never a crash.
for junk in (b"", b"<soap:Envelope><soap:Body>", b"<a></b>", b'<wsdl:binding name="x" qosAvailability="1.2"/>'):
    try:
        parse_descriptor(junk)
    except BrokerError as exc:
        print(f"{exc.name:14s} {exc}")

# %%
# Results round-trip with scores kept to six decimals.
from riabroker import RegistryIndex, ServiceRequest, select_with_strategy  # noqa: E402

reg = RegistryIndex()
reg.register(d)
res = select_with_strategy(ServiceRequest("getForecast", id="1"), reg)
doc = serialize_result(res)
print(doc.decode())
assert serialize_result(parse_result(doc)) == doc
