"""
逻辑计划节点
谓词也是数据（而非可调用对象），计划可以在执行前静态校验
"""
from typing import List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field
from typing_extensions import Annotated

from app.models.schemas import Value


# ==================== 谓词 ====================
class Compare(BaseModel):
    model_config = ConfigDict(frozen=True)
    kind: Literal["compare"] = "compare"
    column: str
    op: Literal["==", "!=", "<", "<=", ">", ">="]
    value: Value = None


class And(BaseModel):
    model_config = ConfigDict(frozen=True)
    kind: Literal["and"] = "and"
    operands: List["Predicate"]


class Or(BaseModel):
    model_config = ConfigDict(frozen=True)
    kind: Literal["or"] = "or"
    operands: List["Predicate"]


class Not(BaseModel):
    model_config = ConfigDict(frozen=True)
    kind: Literal["not"] = "not"
    operand: "Predicate"


class Const(BaseModel):
    model_config = ConfigDict(frozen=True)
    kind: Literal["const"] = "const"
    value: bool = True


Predicate = Annotated[Union[Compare, And, Or, Not, Const], Field(discriminator="kind")]


# ==================== 关系算子 ====================
class Scan(BaseModel):
    model_config = ConfigDict(frozen=True)
    kind: Literal["scan"] = "scan"
    dataset: str
    dedup: bool = False


class Filter(BaseModel):
    model_config = ConfigDict(frozen=True)
    kind: Literal["filter"] = "filter"
    child: "PlanNode"
    predicate: Predicate


class Project(BaseModel):
    model_config = ConfigDict(frozen=True)
    kind: Literal["project"] = "project"
    child: "PlanNode"
    columns: List[str]


class HashJoin(BaseModel):
    """内连接；右侧与左侧重名的列改名为 <name>_right"""
    model_config = ConfigDict(frozen=True)
    kind: Literal["hash_join"] = "hash_join"
    left: "PlanNode"
    right: "PlanNode"
    left_key: str
    right_key: str


class Agg(BaseModel):
    model_config = ConfigDict(frozen=True)
    func: Literal["count", "sum"]
    column: Optional[str] = None
    alias: Optional[str] = None

    @property
    def output_name(self) -> str:
        if self.alias:
            return self.alias
        return self.func if self.column is None else f"{self.func}_{self.column}"


class GroupAgg(BaseModel):
    model_config = ConfigDict(frozen=True)
    kind: Literal["group_agg"] = "group_agg"
    child: "PlanNode"
    keys: List[str] = Field(default_factory=list)
    aggs: List[Agg]


class SortKey(BaseModel):
    model_config = ConfigDict(frozen=True)
    column: str
    descending: bool = False


class Sort(BaseModel):
    """稳定排序，空值总在最后"""
    model_config = ConfigDict(frozen=True)
    kind: Literal["sort"] = "sort"
    child: "PlanNode"
    keys: List[SortKey]


class Limit(BaseModel):
    model_config = ConfigDict(frozen=True)
    kind: Literal["limit"] = "limit"
    child: "PlanNode"
    k: int = Field(ge=0)


PlanNode = Annotated[
    Union[Scan, Filter, Project, HashJoin, GroupAgg, Sort, Limit],
    Field(discriminator="kind"),
]

for _model in (And, Or, Not, Filter, Project, HashJoin, GroupAgg, Sort, Limit):
    _model.model_rebuild()
