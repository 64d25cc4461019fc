# Cell-problem physics implementations
