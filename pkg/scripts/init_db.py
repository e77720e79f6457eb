from app.db.session import engine, init_schema
def init():
    init_schema(engine)
if __name__ == "__main__":
    init()
    print("Run registry schema created.")
