"""
Talking to the broker over HTTP
===============================

A broker is started on a free local port, a few descriptors are registered,
requests are posted with each strategy and the metrics are read back.
"""

import http.client
from pathlib import Path

from riabroker.service import Broker, serve_in_thread

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"

broker = Broker()
server, _ = serve_in_thread(broker)
conn = http.client.HTTPConnection("127.0.0.1", server.server_address[1])


def call(method, path, body=None):
    conn.request(method, path, body=body)
    resp = conn.getresponse()
    payload = resp.read().decode()
    print(f"{method} {path} -> {resp.status}")
    print("   ", payload.strip().replace("\n", "\n    "))
    return resp


# %%
# Register the weather binding and two hand-written descriptors.
call("POST", "/registry", (FIXTURES / "wsdl_weather.xml").read_bytes())
call("POST", "/registry", b'<wsdl:binding name="StormAlerts" qosLatencyMs="15" qosAvailability="0.999">'
                          b'<wsdl:operation name="getForecast"/><wsdl:operation name="alerts"/></wsdl:binding>')
call("POST", "/registry", b'<wsdl:binding name="Quotes"><wsdl:operation name="getQuote"/></wsdl:binding>')
call("POST", "/registry", (FIXTURES / "wsdl_weather.xml").read_bytes())  # 409

# %%
# The same envelope under each strategy.
envelope = (b"<soap:Envelope><soap:Body><q:MessageNeeded><q:MessageID>m-1</q:MessageID>"
            b"<q:Query>getForecast</q:Query><q:Priority>5</q:Priority></q:MessageNeeded></soap:Body></soap:Envelope>")
for strategy in ("normal", "exited", "expected"):
    rid = call("POST", f"/requests?strategy={strategy}", envelope).getheader("X-Request-Id")

# %%
# Errors come back typed.
call("POST", "/requests", (FIXTURES / "query.xml").read_bytes())
call("POST", "/requests", b"<soap:Envelope><soap:Body><q:MessageID>x</q:MessageID><q:Query>!!!</q:Query>"
                          b"</soap:Body></soap:Envelope>")

# %%
# Stored request state and the metrics table.
call("GET", f"/requests/{rid}")
call("GET", "/metrics")

conn.close()
server.shutdown()
server.server_close()
