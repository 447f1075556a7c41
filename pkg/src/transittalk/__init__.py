"""TransitTalk: a transit digital assistant built around a language-model gateway.

Three pipelines share one feed, one alert stream, and one chat memory:

- tweet drafting for service alerts, with preset-format validation and a
  human review queue,
- conversational trip advice over a GTFS schedule,
- policy Q&A grounded on retrieved policy-document chunks.

Every pipeline talks to the model through a provider-agnostic gateway, so
the whole system runs deterministically against scripted transcripts.
"""

__version__ = "0.1.0"
