"""Drive the human-in-the-loop review queue over HTTP in-process: list the
queue, inspect one anomaly, accept a repair, and watch the score drop.

Run:  python demos/07_review_service.py
"""

import json
import threading
import urllib.request

from medgraph import generate, induce, standard_config
from medgraph.service import ReviewService, serve

graph, _truth = generate(standard_config(n_events=1500, n_patients=300, n_physicians=25, seed=7))
grammar = induce(graph)
service = ReviewService(graph, grammar, audit_path="demo_audit.jsonl")
server = serve(service, port=0)
threading.Thread(target=server.serve_forever, daemon=True).start()
base = f"http://127.0.0.1:{server.server_address[1]}"


def get(path):
    with urllib.request.urlopen(base + path) as response:
        return json.loads(response.read())


def post(path, body):
    request = urllib.request.Request(
        base + path, data=json.dumps(body).encode(), method="POST",
        headers={"Content-Type": "application/json"},
    )
    with urllib.request.urlopen(request) as response:
        return json.loads(response.read())


stats = get("/api/stats")
print(f"service up at {base}: {stats['flagged']} flagged, threshold {stats['threshold']:.3f} bits")

queue = get("/api/anomalies?page=1&page_size=3")
print(f"\ntop of the queue ({queue['total']} open):")
for item in queue["items"]:
    print(f"  {item['id']}: node {item['node']} at {item['score']:.2f} bits")

item_id = queue["items"][0]["id"]
detail = get(f"/api/anomalies/{item_id}")
print(f"\n{item_id} detail: kind={detail['node_kind']} attrs={detail['node_attrs']}")
for row in detail["violated_clauses"]:
    print(f"  violated [{row['bits']:.2f} bits]: {row['text']}")
for repair in detail["repairs"]:
    print(f"  repair #{repair['rank']}: {repair['description']} -> {repair['predicted_score_after']:.3f} bits")

result = post(f"/api/anomalies/{item_id}/resolution",
              {"action": "apply_repair", "repair_index": 0, "actor": "demo_reviewer"})
print(f"\napplied repair: new score {result['new_score']:.3f} bits, "
      f"below threshold: {result['below_threshold']}")
print("queue now:", get("/api/stats")["open_items"], "open items")
print("audit trail:", open("demo_audit.jsonl").read().strip().splitlines()[-1])

server.shutdown()
