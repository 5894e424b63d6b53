from .shared import DatasetFormat, DType, EventKind, JobKind, ReadMode, Zone
from .schemas import (
    DatasetDescriptor, DatasetManifest, FieldSpec, FlowGraphSpec, FlowRecord, FlowReport,
    ImportReport, LineageEdge, ObjectKey, ObjectRef, ProvenanceEvent, RankedBrands,
    SchemaDescriptor, TableSource, Tweet,
)
from .plan import Filter, GroupAgg, HashJoin, Limit, Project, Scan, Sort

__all__ = [
    "DatasetFormat", "DType", "EventKind", "JobKind", "ReadMode", "Zone",
    "DatasetDescriptor", "DatasetManifest", "FieldSpec", "FlowGraphSpec", "FlowRecord", "FlowReport",
    "ImportReport", "LineageEdge", "ObjectKey", "ObjectRef", "ProvenanceEvent", "RankedBrands",
    "SchemaDescriptor", "TableSource", "Tweet",
    "Filter", "GroupAgg", "HashJoin", "Limit", "Project", "Scan", "Sort",
]
