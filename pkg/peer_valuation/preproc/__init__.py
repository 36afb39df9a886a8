from peer_valuation.preproc.filtering import FilterReport, ingest_csv
from peer_valuation.preproc.grouping import commune_groups
from peer_valuation.preproc.records import HouseRecord
from peer_valuation.preproc.synthetic import generate_synthetic
