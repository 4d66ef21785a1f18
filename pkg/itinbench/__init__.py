# ItinBench - itinerary planning benchmark toolkit
