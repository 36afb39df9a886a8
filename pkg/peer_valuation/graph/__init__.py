from peer_valuation.graph.geo import GeoPoint, geo_neighborhoods, haversine_km
from peer_valuation.graph.knhs import SpatialGraph, build_graph, knhs_select
