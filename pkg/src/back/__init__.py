"""Backend package: network, training, adjudication, synthesis and evaluation."""
