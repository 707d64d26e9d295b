# Domain types (pydantic)
